#!/usr/bin/env python3
"""
✂️ Model-splitting pFL
======================
Algorithms that share one part of the network and keep the other local:
FedPer, FedRep and FedBABU share the body, LG-FedAvg shares the head and
FedRoD shares the body with a balanced generic head beside a local
personal head.
"""

from typing import List, Tuple
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
    weighted_average,
)
from ..numcore import (
    BODY,
    HEAD,
    Batch,
    Matrix,
    MlpModel,
    backprop,
    ce_logit_grad,
    forward,
    loss_and_grad,
    loss_ce,
    sgd_step,
)
from .base import AlgorithmPlugin, ce_objective, mean_loss, sgd_kernel

logger = logging.getLogger(__name__)

ABSENT_CLASS_COUNT = 1e-8


class SplitPlugin(AlgorithmPlugin):
    """Shares the `shared` segment group; the other group never leaves the client"""

    shared = BODY
    update_kind = PayloadKind.SEGMENTS

    def server_payload(self, server: ServerState, client_id: int) -> Payload:
        return Message(PayloadKind.SEGMENTS, params=server.global_model.params.select(self.shared))

    def receive(self, client: ClientState, payload: Payload) -> MlpModel:
        return client.local.with_params(client.local.params.merge(payload.params))

    def segment_update(self, client: ClientState, loss: float) -> Update:
        return Message(
            PayloadKind.SEGMENTS,
            params=client.local.params.select(self.shared),
            client_id=client.client_id,
            num_samples=client.n_train,
            train_loss=loss,
        )

    def aggregate(self, server: ServerState, updates: List[Update]) -> None:
        shared = weighted_average([(u.params, u.num_samples) for u in updates])
        server.global_model = server.global_model.with_params(server.global_model.params.merge(shared))

    def inference_model(self, server: ServerState, client: ClientState):
        return client.local


class FedPer(SplitPlugin):
    name = "FedPer"
    category = "Model-splitting-based pFL"

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        model = self.receive(client, payload)
        params, loss = sgd_kernel(model.params, self.batches(client, config), ce_objective(model), config.learning_rate)
        client.local = model.with_params(params)
        return self.segment_update(client, loss)


class FedRep(SplitPlugin):
    name = "FedRep"
    category = "Model-splitting-based pFL"
    defaults = {"head_epochs": 1, "body_epochs": 1}

    def validate(self) -> None:
        self.count("head_epochs")
        self.count("body_epochs")

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        model = self.receive(client, payload)
        objective = ce_objective(model)
        body = model.params.resolve(BODY)
        head = model.params.resolve(HEAD)

        params, head_loss = sgd_kernel(
            model.params,
            self.batches(client, config, self.count("head_epochs")),
            objective,
            config.learning_rate,
            mask=body,
        )
        params, body_loss = sgd_kernel(
            params,
            self.batches(client, config, self.count("body_epochs")),
            objective,
            config.learning_rate,
            mask=head,
        )
        client.local = model.with_params(params)
        loss = body_loss if self.count("body_epochs") else head_loss
        return self.segment_update(client, loss)


class LgFedAvg(FedPer):
    name = "LG-FedAvg"
    shared = HEAD


def finetune_head(model: MlpModel, batch: Batch, steps: int, lr: float) -> MlpModel:
    """`steps` full-batch gradient steps on the head only"""
    params = model.params
    body = params.resolve(BODY)
    for _ in range(steps):
        _, grad = loss_and_grad(model.with_params(params), batch)
        params = sgd_step(params, grad, lr, mask=body)
    return model.with_params(params)


class FedBabu(SplitPlugin):
    name = "FedBABU"
    category = "Model-splitting-based pFL"
    defaults = {"finetune_steps": 10}

    def validate(self) -> None:
        self.count("finetune_steps")

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        model = self.receive(client, payload)
        params, loss = sgd_kernel(
            model.params,
            self.batches(client, config),
            ce_objective(model),
            config.learning_rate,
            mask=model.params.resolve(HEAD),
        )
        client.local = model.with_params(params)
        return self.segment_update(client, loss)

    def inference_model(self, server: ServerState, client: ClientState):
        steps = self.count("finetune_steps")
        batch = Batch(client.train.inputs, client.train.labels)
        return finetune_head(client.local, batch, steps, server.config.learning_rate)


# =============================================================================
# ⚖️ FedRoD
# =============================================================================


def balanced_adjustment(counts: np.ndarray) -> np.ndarray:
    """ln(n_c) per class, absent classes counted as 1e-8"""
    counts = np.asarray(counts, dtype=np.float64)
    return np.log(np.where(counts > 0, counts, ABSENT_CLASS_COUNT))


def balanced_ce_grad(logits: Matrix, labels: np.ndarray, counts: np.ndarray) -> Tuple[float, Matrix]:
    """Balanced-softmax CE on logits z_c + ln(n_c): (loss, ∂loss/∂z)"""
    adjust = balanced_adjustment(counts)
    return loss_ce(logits + adjust, labels), ce_logit_grad(logits, labels, adjust=adjust)


def fedrod_step(
    model: MlpModel,
    personal: Tuple[Matrix, np.ndarray],
    batch: Batch,
    counts: np.ndarray,
    lr: float,
    train_personal: bool = True,
) -> Tuple[MlpModel, Tuple[Matrix, np.ndarray], float]:
    """One FedRoD step: generic model on balanced CE, personal head on plain CE.

    The personal head sees detached representations and adds its logits to
    the detached generic logits.
    """
    reps, logits = forward(model, batch.inputs)
    loss, dlogits = balanced_ce_grad(logits, batch.labels, counts)
    grad = backprop(model, batch.inputs, reps, dlogits)
    model = model.with_params(sgd_step(model.params, grad, lr))

    weight, bias = personal
    if train_personal:
        combined = logits + reps @ weight + bias
        dcombined = ce_logit_grad(combined, batch.labels)
        weight = weight - lr * (reps.T @ dcombined)
        bias = bias - lr * np.sum(dcombined, axis=0)
    return model, (weight, bias), loss


def fedrod_logits(model: MlpModel, personal: Tuple[Matrix, np.ndarray], inputs: Matrix) -> Matrix:
    """Generic logits plus personal-head logits on the shared representation"""
    weight, bias = personal
    reps, logits = forward(model, inputs)
    return logits + reps @ weight + bias


class FedRod(AlgorithmPlugin):
    name = "FedRoD"
    category = "Model-splitting-based pFL"
    defaults = {"personal_head": 1.0}

    def init(self, server: ServerState, clients: List[ClientState]) -> None:
        model = server.global_model
        for client in clients:
            client.state["personal_head"] = (
                np.zeros((model.hidden_dim, model.num_classes)),
                np.zeros(model.num_classes),
            )

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        model = client.local.with_params(payload.params)
        personal = client.state["personal_head"]
        counts = client.class_counts()
        losses = []
        for batch in self.batches(client, config):
            model, personal, loss = fedrod_step(
                model, personal, batch, counts, config.learning_rate, bool(self.hp["personal_head"])
            )
            losses.append(loss)
        client.local = model
        client.state["personal_head"] = personal
        return self.full_update(client, model.params, mean_loss(losses))

    def inference_model(self, server: ServerState, client: ClientState):
        model = client.local
        personal = client.state["personal_head"]
        return lambda inputs: np.argmax(fedrod_logits(model, personal, inputs), axis=1)
