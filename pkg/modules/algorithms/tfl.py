#!/usr/bin/env python3
"""
🌍 Traditional FL
=================
FedAvg, FedProx and SCAFFOLD: one shared model, evaluated as such.
"""

from typing import Any, Iterable, List, Tuple
import logging

from ..engine import ClientState, Message, Payload, PayloadKind, RunConfig, ServerState, Update, weighted_average
from ..numcore import ParamVector, sgd_step
from .base import AlgorithmPlugin, Objective, ce_objective, mean_loss, prox_kernel, sgd_kernel

logger = logging.getLogger(__name__)


def scaffold_kernel(
    w: ParamVector,
    c: ParamVector,
    c_i: ParamVector,
    batches: Iterable[Any],
    objective: Objective,
    lr: float,
) -> Tuple[ParamVector, ParamVector, float]:
    """K corrected steps v ← v − η(g − c_i + c); returns (v, c_i⁺, mean loss).

    c_i⁺ = c_i − c + (w − v)/(K·η); with no steps c_i is returned unchanged.
    """
    v = w
    losses = []
    for batch in batches:
        loss, grad = objective(v, batch)
        corrected = grad.data - c_i.data + c.data
        v = sgd_step(v, grad.with_data(corrected), lr)
        losses.append(loss)
    steps = len(losses)
    if steps == 0:
        return v, c_i, 0.0
    c_new = c_i.data - c.data + (w.data - v.data) / (steps * lr)
    return v, c_i.with_data(c_new), mean_loss(losses)


class FedAvg(AlgorithmPlugin):
    name = "FedAvg"
    category = "Basic tFL"

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        params, loss = sgd_kernel(
            payload.params,
            self.batches(client, config),
            ce_objective(client.local),
            config.learning_rate,
        )
        client.local = client.local.with_params(params)
        return self.full_update(client, params, loss)

    def inference_model(self, server: ServerState, client: ClientState):
        return server.global_model


class FedProx(FedAvg):
    name = "FedProx"
    category = "Regularization-based tFL"
    defaults = {"mu": 0.01}

    def validate(self) -> None:
        self.require(self.hp["mu"] >= 0, "mu must be ≥ 0")

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        params, loss = prox_kernel(
            payload.params,
            payload.params,
            self.batches(client, config),
            ce_objective(client.local),
            config.learning_rate,
            self.hp["mu"],
        )
        client.local = client.local.with_params(params)
        return self.full_update(client, params, loss)


class Scaffold(FedAvg):
    name = "SCAFFOLD"
    category = "Update-correction-based tFL"
    defaults = {"server_lr": 1.0}
    update_kind = PayloadKind.CONTROL

    def validate(self) -> None:
        self.require(self.hp["server_lr"] > 0, "server_lr must be > 0")

    def init(self, server: ServerState, clients: List[ClientState]) -> None:
        zeros = server.global_model.params.zeros_like()
        server.state["control"] = zeros
        for client in clients:
            client.state["control"] = zeros

    def server_payload(self, server: ServerState, client_id: int) -> Payload:
        return Message(PayloadKind.CONTROL, params=server.global_model.params, control=server.state["control"])

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        c_i = client.state["control"]
        v, c_new, loss = scaffold_kernel(
            payload.params,
            payload.control,
            c_i,
            self.batches(client, config),
            ce_objective(client.local),
            config.learning_rate,
        )
        client.state["control"] = c_new
        client.local = client.local.with_params(v)
        return Message(
            PayloadKind.CONTROL,
            params=v.with_data(v.data - payload.params.data),
            control=c_new.with_data(c_new.data - c_i.data),
            client_id=client.client_id,
            num_samples=client.n_train,
            train_loss=loss,
        )

    def aggregate(self, server: ServerState, updates: List[Update]) -> None:
        mean_dw = weighted_average([(u.params, 1.0) for u in updates])
        mean_dc = weighted_average([(u.control, 1.0) for u in updates])
        w = server.global_model.params
        c = server.state["control"]
        server.global_model = server.global_model.with_params(
            w.with_data(w.data + self.hp["server_lr"] * mean_dw.data)
        )
        server.state["control"] = c.with_data(c.data + (len(updates) / server.num_clients) * mean_dc.data)
