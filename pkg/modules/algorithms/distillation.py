#!/usr/bin/env python3
"""
🧪 Knowledge-distillation pFL
=============================
FedProto exchanges per-class mean representations, FedDistill per-class mean
logits. Neither aggregates parameters: each client's model stays local and
the server model is the untouched shared initialisation.
"""

from typing import Dict, List, Sequence, Tuple
import logging

import numpy as np

from ..engine import ClientState, Message, Payload, PayloadKind, RunConfig, ServerState, Update
from ..numcore import Batch, Matrix, MlpModel, ParamVector, backprop, ce_logit_grad, forward, loss_ce, sgd_step
from .base import AlgorithmPlugin, mean_loss

logger = logging.getLogger(__name__)

ClassTable = Dict[int, np.ndarray]


def class_means(values: Matrix, labels: np.ndarray) -> Tuple[ClassTable, Dict[int, int]]:
    """Per-class row means and counts for every class present in `labels`"""
    table: ClassTable = {}
    counts: Dict[int, int] = {}
    for c in np.unique(labels):
        rows = values[labels == c]
        table[int(c)] = rows.mean(axis=0)
        counts[int(c)] = int(rows.shape[0])
    return table, counts


def aggregate_tables(tables: Sequence[Tuple[ClassTable, Dict[int, int]]]) -> ClassTable:
    """Count-weighted per-class average over the clients holding each class"""
    merged: ClassTable = {}
    classes = sorted({c for table, _ in tables for c in table})
    for c in classes:
        holders = [(table[c], counts[c]) for table, counts in tables if c in table]
        total = float(sum(n for _, n in holders))
        first = np.asarray(holders[0][0], dtype=np.float64)
        acc = first.copy()
        for vector, n in holders[1:]:
            acc += (n / total) * (np.asarray(vector, dtype=np.float64) - first)
        merged[c] = acc
    return merged


def _targets(table: ClassTable, labels: np.ndarray, width: int) -> Tuple[Matrix, np.ndarray]:
    """Rows of `table` per label plus a mask of labels that have an entry"""
    targets = np.zeros((labels.size, width))
    mask = np.zeros(labels.size, dtype=bool)
    for c, vector in table.items():
        rows = labels == c
        targets[rows] = vector
        mask |= rows
    return targets, mask


# =============================================================================
# 🧷 FedProto
# =============================================================================


def fedproto_loss_grad(model: MlpModel, batch: Batch, prototypes: ClassTable, lam: float) -> Tuple[float, ParamVector]:
    """CE + λ·mean over the batch of ‖rep(x) − P_y‖², samples without P_y contribute 0"""
    reps, logits = forward(model, batch.inputs)
    loss = loss_ce(logits, batch.labels)
    dlogits = ce_logit_grad(logits, batch.labels)
    drep = None
    if lam and prototypes:
        targets, mask = _targets(prototypes, batch.labels, reps.shape[1])
        diff = (reps - targets) * mask[:, None]
        loss += lam * float(np.sum(diff ** 2)) / batch.size
        drep = (2.0 * lam / batch.size) * diff
    return loss, backprop(model, batch.inputs, reps, dlogits, drep)


def nearest_prototype(reps: Matrix, prototypes: ClassTable) -> np.ndarray:
    """Class of the closest prototype per row; lowest class index wins ties"""
    classes = sorted(prototypes)
    centres = np.stack([prototypes[c] for c in classes])
    dists = np.sum((reps[:, None, :] - centres[None, :, :]) ** 2, axis=-1)
    return np.asarray(classes)[np.argmin(dists, axis=1)]


class FedProto(AlgorithmPlugin):
    name = "FedProto"
    category = "Knowledge-distillation-based pFL"
    defaults = {"lambda": 1.0}
    update_kind = PayloadKind.PROTOTYPES

    def validate(self) -> None:
        self.require(self.hp["lambda"] >= 0, "lambda must be ≥ 0")

    def init(self, server: ServerState, clients: List[ClientState]) -> None:
        server.state["prototypes"] = {}

    def server_payload(self, server: ServerState, client_id: int) -> Payload:
        return Message(PayloadKind.PROTOTYPES, table=dict(server.state["prototypes"]), counts={})

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        model = client.local
        losses = []
        for batch in self.batches(client, config):
            loss, grad = fedproto_loss_grad(model, batch, payload.table, self.hp["lambda"])
            model = model.with_params(sgd_step(model.params, grad, config.learning_rate))
            losses.append(loss)
        client.local = model

        reps, _ = forward(model, client.train.inputs)
        table, counts = class_means(reps, client.train.labels)
        client.state["prototypes"] = table
        return Message(
            PayloadKind.PROTOTYPES,
            table=table,
            counts=counts,
            client_id=client.client_id,
            num_samples=client.n_train,
            train_loss=mean_loss(losses),
        )

    def aggregate(self, server: ServerState, updates: List[Update]) -> None:
        server.state["prototypes"] = aggregate_tables([(u.table, u.counts) for u in updates])

    def inference_model(self, server: ServerState, client: ClientState):
        prototypes = client.state.get("prototypes")
        if not prototypes:
            return None
        model = client.local
        return lambda inputs: nearest_prototype(forward(model, inputs)[0], prototypes)


# =============================================================================
# 🌡️ FedDistill
# =============================================================================


def feddistill_loss_grad(model: MlpModel, batch: Batch, class_logits: ClassTable, gamma: float) -> Tuple[float, ParamVector]:
    """CE + γ·Σ‖z − g_y‖²/(n·C) over samples whose class has a global entry"""
    reps, logits = forward(model, batch.inputs)
    loss = loss_ce(logits, batch.labels)
    dlogits = ce_logit_grad(logits, batch.labels)
    if gamma and class_logits:
        width = logits.shape[1]
        targets, mask = _targets(class_logits, batch.labels, width)
        diff = (logits - targets) * mask[:, None]
        scale = gamma / (batch.size * width)
        loss += scale * float(np.sum(diff ** 2))
        dlogits = dlogits + 2.0 * scale * diff
    return loss, backprop(model, batch.inputs, reps, dlogits)


class FedDistill(AlgorithmPlugin):
    name = "FedDistill"
    category = "Knowledge-distillation-based pFL"
    defaults = {"gamma": 1.0}
    update_kind = PayloadKind.CLASS_LOGITS

    def validate(self) -> None:
        self.require(self.hp["gamma"] >= 0, "gamma must be ≥ 0")

    def init(self, server: ServerState, clients: List[ClientState]) -> None:
        server.state["class_logits"] = {}

    def server_payload(self, server: ServerState, client_id: int) -> Payload:
        return Message(PayloadKind.CLASS_LOGITS, table=dict(server.state["class_logits"]), counts={})

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        model = client.local
        losses = []
        for batch in self.batches(client, config):
            loss, grad = feddistill_loss_grad(model, batch, payload.table, self.hp["gamma"])
            model = model.with_params(sgd_step(model.params, grad, config.learning_rate))
            losses.append(loss)
        client.local = model

        _, logits = forward(model, client.train.inputs)
        table, counts = class_means(logits, client.train.labels)
        return Message(
            PayloadKind.CLASS_LOGITS,
            table=table,
            counts=counts,
            client_id=client.client_id,
            num_samples=client.n_train,
            train_loss=mean_loss(losses),
        )

    def aggregate(self, server: ServerState, updates: List[Update]) -> None:
        server.state["class_logits"] = aggregate_tables([(u.table, u.counts) for u in updates])

    def inference_model(self, server: ServerState, client: ClientState):
        return client.local
