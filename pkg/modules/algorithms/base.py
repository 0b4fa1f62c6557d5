#!/usr/bin/env python3
"""
🧩 Algorithm Plugin Base
========================
Hook contract shared by every federated algorithm, plus the plain local-SGD
kernel the concrete plugins build on.

Update rules are written as kernels over ParamVectors and an objective
callable `(params, batch) -> (loss, grad)`, so the same code serves the MLP
and hand-checkable one-parameter problems.
"""

from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple
import logging

import numpy as np

from ..engine import (
    ClientState,
    Message,
    Payload,
    PayloadKind,
    RunConfig,
    ServerState,
    Update,
    epoch_batches,
    weighted_average,
)
from ..errors import ConfigError
from ..numcore import MlpModel, ParamVector, loss_and_grad, sgd_step

logger = logging.getLogger(__name__)

Objective = Callable[[ParamVector, Any], Tuple[float, ParamVector]]


def ce_objective(template: MlpModel) -> Objective:
    """Mean cross-entropy of the MLP evaluated at arbitrary parameters"""
    def objective(params: ParamVector, batch) -> Tuple[float, ParamVector]:
        return loss_and_grad(template.with_params(params), batch)
    return objective


def mean_loss(losses: Sequence[float]) -> float:
    return float(np.mean(losses)) if len(losses) else 0.0


def sgd_kernel(
    params: ParamVector,
    batches: Iterable[Any],
    objective: Objective,
    lr: float,
    mask: Optional[Sequence[str]] = None,
) -> Tuple[ParamVector, float]:
    """Plain SGD over `batches`; segments named in `mask` stay fixed"""
    losses = []
    for batch in batches:
        loss, grad = objective(params, batch)
        params = sgd_step(params, grad, lr, mask)
        losses.append(loss)
    return params, mean_loss(losses)


def prox_kernel(
    params: ParamVector,
    anchor: ParamVector,
    batches: Iterable[Any],
    objective: Objective,
    lr: float,
    mu: float,
) -> Tuple[ParamVector, float]:
    """SGD on L(v) + mu/2·‖v − anchor‖², i.e. steps along g + mu·(v − anchor)"""
    losses = []
    for batch in batches:
        loss, grad = objective(params, batch)
        corrected = grad.data + mu * (params.data - anchor.data)
        params = sgd_step(params, grad.with_data(corrected), lr)
        losses.append(loss)
    return params, mean_loss(losses)


class AlgorithmPlugin:
    """Behaviour bundle for one algorithm; all mutable state lives in client/server state"""

    name = "base"
    category = ""
    defaults: Dict[str, Optional[float]] = {}
    update_kind = PayloadKind.FULL

    def __init__(self, hyperparams: Optional[Dict[str, float]] = None):
        given = {str(k).lower(): v for k, v in (hyperparams or {}).items()}
        unknown = sorted(set(given) - set(self.defaults))
        if unknown:
            accepted = ", ".join(sorted(self.defaults)) or "none"
            raise ConfigError(
                f"{self.name} does not take hyperparameter(s) {', '.join(unknown)}; accepted: {accepted}"
            )
        self.hp: Dict[str, Optional[float]] = {**self.defaults, **{k: float(v) for k, v in given.items()}}
        self.validate()

    # -------------------------------------------------------------------------
    # hyperparameters
    # -------------------------------------------------------------------------

    def validate(self) -> None:
        """Range checks; subclasses raise ConfigError on bad values"""

    def require(self, condition: bool, message: str) -> None:
        if not condition:
            raise ConfigError(f"{self.name}: {message}")

    def count(self, name: str) -> int:
        value = self.hp[name]
        self.require(value is not None and value >= 0 and float(value).is_integer(), f"{name} must be a whole number ≥ 0")
        return int(value)

    # -------------------------------------------------------------------------
    # hooks
    # -------------------------------------------------------------------------

    def init(self, server: ServerState, clients: List[ClientState]) -> None:
        pass

    def server_payload(self, server: ServerState, client_id: int) -> Payload:
        return Message(PayloadKind.FULL, params=server.global_model.params)

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        raise NotImplementedError

    def aggregate(self, server: ServerState, updates: List[Update]) -> None:
        """Sample-weighted average of full parameter uploads"""
        params = weighted_average([(u.params, u.num_samples) for u in updates])
        server.global_model = server.global_model.with_params(params)

    def inference_model(self, server: ServerState, client: ClientState) -> Any:
        return None

    # -------------------------------------------------------------------------
    # helpers
    # -------------------------------------------------------------------------

    def batches(self, client: ClientState, config: RunConfig, epochs: Optional[int] = None) -> List:
        passes = config.local_epochs if epochs is None else epochs
        return epoch_batches(client.train, passes, config.batch_size, client.rng)

    def full_update(self, client: ClientState, params: ParamVector, loss: float) -> Update:
        return Message(
            PayloadKind.FULL,
            params=params,
            client_id=client.client_id,
            num_samples=client.n_train,
            train_loss=loss,
        )

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.hp})"
