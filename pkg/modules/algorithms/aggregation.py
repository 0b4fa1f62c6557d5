#!/usr/bin/env python3
"""
🧬 Personalized-aggregation pFL
===============================
APFL (learned mixture of a local and the global model), FedAMP (attentive
per-client cloud models) and FedALA (element-wise adaptive blending of the
received head).
"""

from typing import Any, Iterable, List, Sequence, Tuple
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
)
from ..numcore import HEAD, Batch, ParamVector, axpy, clip01, dot, hadamard, scale, sgd_step, sub
from .base import AlgorithmPlugin, Objective, ce_objective, mean_loss, prox_kernel, sgd_kernel

logger = logging.getLogger(__name__)

ALA_STREAM = "ala"


# =============================================================================
# 🔀 APFL
# =============================================================================


def apfl_mixture(w: ParamVector, v: ParamVector, alpha: float) -> ParamVector:
    """ᾱ·v + (1−ᾱ)·w"""
    return axpy(alpha, v, scale(1.0 - alpha, w))


def apfl_kernel(
    w: ParamVector,
    v: ParamVector,
    alpha: float,
    batches: Iterable[Any],
    objective: Objective,
    lr: float,
    adapt_alpha: bool,
) -> Tuple[ParamVector, ParamVector, float, float]:
    """Simultaneous APFL steps; returns (w, v, ᾱ, mean loss of the w branch).

    m = ᾱv + (1−ᾱ)w; w ← w − η·g(w); v ← v − η·ᾱ·g(m);
    ᾱ ← clip01(ᾱ − η·⟨g(m), v − w⟩) when adapting. All use start-of-step values.
    """
    losses = []
    for batch in batches:
        loss, grad_w = objective(w, batch)
        mixed = apfl_mixture(w, v, alpha)
        _, grad_m = objective(mixed, batch)
        w_next = sgd_step(w, grad_w, lr)
        v_next = axpy(-lr * alpha, grad_m, v)
        if adapt_alpha:
            alpha = clip01(alpha - lr * dot(grad_m, sub(v, w)))
        w, v = w_next, v_next
        losses.append(loss)
    return w, v, alpha, mean_loss(losses)


class Apfl(AlgorithmPlugin):
    name = "APFL"
    category = "Personalized-aggregation-based pFL"
    defaults = {"alpha0": 0.5, "adapt_alpha": 1.0}

    def validate(self) -> None:
        self.require(0.0 <= self.hp["alpha0"] <= 1.0, "alpha0 must lie in [0, 1]")

    def init(self, server: ServerState, clients: List[ClientState]) -> None:
        for client in clients:
            client.state["v"] = server.global_model.params
            client.state["alpha"] = float(self.hp["alpha0"])

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        w, v, alpha, loss = apfl_kernel(
            payload.params,
            client.state["v"],
            client.state["alpha"],
            self.batches(client, config),
            ce_objective(client.local),
            config.learning_rate,
            bool(self.hp["adapt_alpha"]),
        )
        client.local = client.local.with_params(w)
        client.state["v"] = v
        client.state["alpha"] = alpha
        return self.full_update(client, w, loss)

    def inference_model(self, server: ServerState, client: ClientState):
        mixed = apfl_mixture(client.local.params, client.state["v"], client.state["alpha"])
        return client.local.with_params(mixed)


# =============================================================================
# ☁️ FedAMP
# =============================================================================


def fedamp_weights(params: Sequence[ParamVector], sigma: float, alpha_amp: float) -> np.ndarray:
    """Row-stochastic attention matrix ξ over the given models.

    ξ_ij = α·exp(−‖w_i − w_j‖²/σ) for j ≠ i and ξ_ii = 1 − Σ_{j≠i} ξ_ij. A row
    whose off-diagonal mass reaches 1 is renormalised with ξ_ii = α instead.
    """
    m = len(params)
    stacked = np.stack([p.data for p in params]) if m else np.zeros((0, 0))
    xi = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i != j:
                dist = float(np.sum((stacked[i] - stacked[j]) ** 2))
                xi[i, j] = alpha_amp * np.exp(-dist / sigma)
        off = float(xi[i].sum())
        if off < 1.0:
            xi[i, i] = 1.0 - off
        else:
            xi[i, i] = alpha_amp
            xi[i] /= xi[i].sum()
    return xi


def fedamp_cloud_models(params: Sequence[ParamVector], sigma: float, alpha_amp: float) -> List[ParamVector]:
    """u_i = Σ_j ξ_ij w_j, evaluated as w_i + Σ_{j≠i} ξ_ij (w_j − w_i)"""
    xi = fedamp_weights(params, sigma, alpha_amp)
    clouds = []
    for i, own in enumerate(params):
        acc = own.data.copy()
        for j, other in enumerate(params):
            if j != i:
                acc += xi[i, j] * (other.data - own.data)
        clouds.append(own.with_data(acc))
    return clouds


class FedAmp(AlgorithmPlugin):
    name = "FedAMP"
    category = "Personalized-aggregation-based pFL"
    defaults = {"sigma": 1.0, "lambda": 1.0, "alpha_amp": 0.1}

    def validate(self) -> None:
        self.require(self.hp["sigma"] > 0, "sigma must be > 0")
        self.require(self.hp["lambda"] >= 0, "lambda must be ≥ 0")
        self.require(0.0 <= self.hp["alpha_amp"] < 1.0, "alpha_amp must lie in [0, 1)")

    def init(self, server: ServerState, clients: List[ClientState]) -> None:
        server.state["cloud"] = {}

    def server_payload(self, server: ServerState, client_id: int) -> Payload:
        cloud = server.state["cloud"].get(client_id, server.global_model.params)
        return Message(PayloadKind.CLOUD, params=cloud)

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        v, loss = prox_kernel(
            client.local.params,
            payload.params,
            self.batches(client, config),
            ce_objective(client.local),
            config.learning_rate,
            self.hp["lambda"],
        )
        client.local = client.local.with_params(v)
        return self.full_update(client, v, loss)

    def aggregate(self, server: ServerState, updates: List[Update]) -> None:
        uploads = [u.params for u in updates]
        clouds = fedamp_cloud_models(uploads, self.hp["sigma"], self.hp["alpha_amp"])
        for update, cloud in zip(updates, clouds):
            server.state["cloud"][update.client_id] = cloud
        super().aggregate(server, updates)

    def inference_model(self, server: ServerState, client: ClientState):
        return client.local


# =============================================================================
# 🎚️ FedALA
# =============================================================================


def ala_blend(h_old: ParamVector, h_global: ParamVector, weights: ParamVector) -> ParamVector:
    """h_old + W ⊙ (h_global − h_old), written so that W = 1 returns h_global exactly"""
    keep = axpy(-1.0, weights, weights.full_like(1.0))
    return axpy(1.0, hadamard(keep, sub(h_old, h_global)), h_global)


def ala_weight_step(
    weights: ParamVector,
    grad_blend: ParamVector,
    h_global: ParamVector,
    h_old: ParamVector,
    ala_lr: float,
) -> ParamVector:
    """W ← clip01(W − η_ala · ∂L/∂h ⊙ (h_global − h_old))"""
    return clip01(axpy(-ala_lr, hadamard(grad_blend, sub(h_global, h_old)), weights))


def ala_adapt(
    local: ParamVector,
    received: ParamVector,
    weights: ParamVector,
    batch: Batch,
    objective: Objective,
    ala_lr: float,
    threshold: float,
    max_iters: int,
) -> Tuple[ParamVector, ParamVector, int]:
    """Learn head blending weights on `batch`; returns (blended model, weights, iterations).

    The body is taken from `received`; only head segments are blended.
    """
    h_old = local.select(HEAD)
    h_global = received.select(HEAD)
    w = weights
    losses: List[float] = []
    iterations = 0
    for _ in range(max_iters):
        blended = received.merge(ala_blend(h_old, h_global, w))
        loss, grad = objective(blended, batch)
        w = ala_weight_step(w, grad.select(HEAD), h_global, h_old, ala_lr)
        iterations += 1
        losses.append(loss)
        if len(losses) >= 2 and losses[-2] - losses[-1] < threshold:
            break
    blended = received.merge(ala_blend(h_old, h_global, w))
    return blended, w, iterations


class FedAla(AlgorithmPlugin):
    name = "FedALA"
    category = "Personalized-aggregation-based pFL"
    defaults = {"ala_lr": 1.0, "ala_threshold": 1e-3, "ala_max_iters": 20, "rand_fraction": 0.8}

    def validate(self) -> None:
        self.require(self.hp["ala_lr"] >= 0, "ala_lr must be ≥ 0")
        self.require(0.0 < self.hp["rand_fraction"] <= 1.0, "rand_fraction must lie in (0, 1]")
        self.count("ala_max_iters")

    def init(self, server: ServerState, clients: List[ClientState]) -> None:
        ones = server.global_model.params.select(HEAD).full_like(1.0)
        for client in clients:
            client.state["ala_weights"] = ones
            client.state["ala_rng"] = server.stream(ALA_STREAM, client.client_id)
            client.state["ala_ready"] = False

    def _subset(self, client: ClientState) -> Batch:
        n = client.n_train
        size = max(1, int(round(self.hp["rand_fraction"] * n)))
        idx = np.sort(client.state["ala_rng"].choice(n, size=size, replace=False))
        return Batch(client.train.inputs[idx], client.train.labels[idx])

    def local_train(self, client: ClientState, payload: Payload, config: RunConfig) -> Update:
        objective = ce_objective(client.local)
        start = payload.params
        if client.state["ala_ready"]:
            start, weights, iterations = ala_adapt(
                client.local.params,
                payload.params,
                client.state["ala_weights"],
                self._subset(client),
                objective,
                self.hp["ala_lr"],
                self.hp["ala_threshold"],
                self.count("ala_max_iters"),
            )
            client.state["ala_weights"] = weights
            logger.debug(f"Client {client.client_id}: ALA converged after {iterations} iterations")
        client.state["ala_ready"] = True

        params, loss = sgd_kernel(start, self.batches(client, config), objective, config.learning_rate)
        client.local = client.local.with_params(params)
        return self.full_update(client, params, loss)

    def inference_model(self, server: ServerState, client: ClientState):
        return client.local
