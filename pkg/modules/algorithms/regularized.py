#!/usr/bin/env python3
"""
🪢 Regularization-based pFL
===========================
pFedMe (Moreau-envelope personal models) and Ditto (proximal personal
models trained beside a FedAvg global model).
"""

from typing import Any, Iterable, List, Tuple
import logging

from ..engine import ClientState, Payload, RunConfig, ServerState, Update, epoch_batches
from ..numcore import ParamVector
from .base import AlgorithmPlugin, Objective, ce_objective, mean_loss, prox_kernel, sgd_kernel

logger = logging.getLogger(__name__)

PERSONAL_STREAM = "personal"


def pfedme_kernel(
    w_i: ParamVector,
    batches: Iterable[Any],
    objective: Objective,
    lr: float,
    lam: float,
    k_inner: int,
    eta_inner: float,
) -> Tuple[ParamVector, ParamVector, float]:
    """Returns (local w_i, personal θ, mean inner loss).

    Per batch: θ starts at w_i and takes k_inner steps on g(θ) + λ(θ − w_i),
    then w_i ← w_i − η·λ·(w_i − θ).
    """
    theta = w_i
    losses = []
    for batch in batches:
        theta = w_i
        for _ in range(k_inner):
            loss, grad = objective(theta, batch)
            step = grad.data + lam * (theta.data - w_i.data)
            theta = theta.with_data(theta.data - eta_inner * step)
            losses.append(loss)
        w_i = w_i.with_data(w_i.data - lr * lam * (w_i.data - theta.data))
    return w_i, theta, mean_loss(losses)


class PFedMe(AlgorithmPlugin):
    name = "pFedMe"
    category = "Regularization-based pFL"
    defaults = {"lambda": 1.0, "k_inner": 5, "eta_inner": 0.01}

    def validate(self) -> None:
        self.require(self.hp["lambda"] >= 0, "lambda must be ≥ 0")
        self.require(self.hp["eta_inner"] > 0, "eta_inner must be > 0")
        self.count("k_inner")

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        w_i, theta, loss = pfedme_kernel(
            payload.params,
            self.batches(client, config),
            ce_objective(client.local),
            config.learning_rate,
            self.hp["lambda"],
            self.count("k_inner"),
            self.hp["eta_inner"],
        )
        client.local = client.local.with_params(w_i)
        client.personal = client.local.with_params(theta)
        return self.full_update(client, w_i, loss)

    def inference_model(self, server: ServerState, client: ClientState):
        return client.personal


class Ditto(AlgorithmPlugin):
    name = "Ditto"
    category = "Regularization-based pFL"
    defaults = {"lambda": 1.0}

    def validate(self) -> None:
        self.require(self.hp["lambda"] >= 0, "lambda must be ≥ 0")

    def init(self, server: ServerState, clients: List[ClientState]) -> None:
        for client in clients:
            client.personal = server.global_model
            client.state["personal_rng"] = server.stream(PERSONAL_STREAM, client.client_id)

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        objective = ce_objective(client.local)

        # global branch: plain FedAvg on the shared training stream
        w, loss = sgd_kernel(payload.params, self.batches(client, config), objective, config.learning_rate)
        client.local = client.local.with_params(w)

        personal_batches = epoch_batches(
            client.train, config.local_epochs, config.batch_size, client.state["personal_rng"]
        )
        v, _ = prox_kernel(
            client.personal.params,
            payload.params,
            personal_batches,
            objective,
            config.learning_rate,
            self.hp["lambda"],
        )
        client.personal = client.personal.with_params(v)
        return self.full_update(client, w, loss)

    def inference_model(self, server: ServerState, client: ClientState):
        return client.personal
