#!/usr/bin/env python3
"""
🎓 Meta-learning pFL
====================
First-order Per-FedAvg.
"""

from typing import Any, List, Sequence, Tuple
import logging

from ..engine import ClientState, Payload, RunConfig, ServerState, Update, minibatches
from ..numcore import Batch, ParamVector, sgd_step
from .base import AlgorithmPlugin, Objective, ce_objective, mean_loss

logger = logging.getLogger(__name__)


def pair_batches(batches: Sequence[Batch]) -> List[Tuple[Batch, Batch]]:
    """Consecutive minibatches as (B1, B2) pairs; a trailing odd batch is halved"""
    pairs = [(batches[i], batches[i + 1]) for i in range(0, len(batches) - 1, 2)]
    if len(batches) % 2 == 1:
        last = batches[-1]
        half = (last.size + 1) // 2
        if last.size >= 2:
            pairs.append((
                Batch(last.inputs[:half], last.labels[:half]),
                Batch(last.inputs[half:], last.labels[half:]),
            ))
    return pairs


def perfedavg_kernel(
    params: ParamVector,
    pairs: Sequence[Tuple[Any, Any]],
    objective: Objective,
    alpha: float,
    beta: float,
) -> Tuple[ParamVector, float]:
    """Per pair: w' = w − α·g(B1, w); w ← w − β·g(B2, w')"""
    losses = []
    for first, second in pairs:
        _, grad = objective(params, first)
        adapted = sgd_step(params, grad, alpha)
        loss, meta_grad = objective(adapted, second)
        params = sgd_step(params, meta_grad, beta)
        losses.append(loss)
    return params, mean_loss(losses)


class PerFedAvg(AlgorithmPlugin):
    name = "Per-FedAvg"
    category = "Meta-learning-based pFL"
    # None: use the run's learning rate
    defaults = {"alpha": None, "beta": None}

    def validate(self) -> None:
        for key in ("alpha", "beta"):
            self.require(self.hp[key] is None or self.hp[key] >= 0, f"{key} must be ≥ 0")

    def rates(self, config: RunConfig) -> Tuple[float, float]:
        alpha = config.learning_rate if self.hp["alpha"] is None else self.hp["alpha"]
        beta = config.learning_rate if self.hp["beta"] is None else self.hp["beta"]
        return alpha, beta

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        alpha, beta = self.rates(config)
        params, loss = perfedavg_kernel(
            payload.params,
            pair_batches(self.batches(client, config)),
            ce_objective(client.local),
            alpha,
            beta,
        )
        client.local = client.local.with_params(params)
        return self.full_update(client, params, loss)

    def inference_model(self, server: ServerState, client: ClientState):
        """Current global model after one α step on a batch of the client's train data"""
        alpha, _ = self.rates(server.config)
        rng = server.stream("adapt", server.round, client.client_id)
        batch = next(minibatches(client.train, server.config.batch_size, rng))
        model = server.global_model
        _, grad = ce_objective(model)(model.params, batch)
        return model.with_params(sgd_step(model.params, grad, alpha))
