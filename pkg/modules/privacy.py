#!/usr/bin/env python3
"""
🔒 Privacy Module
=================
Gaussian-mechanism noising of client updates, closed-form gradient
inversion of a single-sample linear-softmax head, and PSNR scoring.

The inversion attacks the classifier head: for a model with a hidden layer
the "input" it recovers is the post-ReLU representation.
"""

import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple
import logging

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .errors import DegenerateGradientError, ShapeError
from .numcore import Matrix, MlpModel, ParamVector, forward, softmax, sq_norm

logger = logging.getLogger(__name__)


class DpConfig(BaseModel):
    """Clip-and-noise settings for client uploads"""

    enabled: bool = False
    clip_norm: float = Field(1.0, gt=0)
    sigma: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _finite(self) -> "DpConfig":
        if not (math.isfinite(self.clip_norm) and math.isfinite(self.sigma)):
            raise ValueError("clip_norm and sigma must be finite")
        return self


@dataclass
class DlgResult:
    reconstruction: np.ndarray
    label: int
    psnr_db: Optional[float] = None


# =============================================================================
# 🌫️ DIFFERENTIAL PRIVACY
# =============================================================================


def dp_privatize(update: ParamVector, cfg: DpConfig, rng: np.random.Generator) -> ParamVector:
    """u·min(1, C/‖u‖) + N(0, (σC)²·I); unchanged when cfg is disabled"""
    if not cfg.enabled:
        return update
    norm = math.sqrt(sq_norm(update))
    factor = min(1.0, cfg.clip_norm / norm) if norm > 0 else 1.0
    clipped = update.data * factor
    if cfg.sigma > 0:
        clipped = clipped + rng.normal(0.0, cfg.sigma * cfg.clip_norm, size=update.size)
    return update.with_data(clipped)


# =============================================================================
# 🕵️ GRADIENT INVERSION
# =============================================================================


def head_gradients(weight: Matrix, bias: np.ndarray, x: np.ndarray, label: int) -> Tuple[Matrix, np.ndarray]:
    """CE gradients of a linear-softmax layer z = W·x + b on one sample.

    `weight` is (C × d); returns grad_W (C × d) and grad_b (C).
    """
    weight = np.asarray(weight, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if weight.ndim != 2 or weight.shape[1] != x.size or np.shape(bias) != (weight.shape[0],):
        raise ShapeError(f"weight {weight.shape}, bias {np.shape(bias)} and x {x.shape} disagree")
    probs = softmax((weight @ x + bias)[None, :])[0]
    grad_b = probs.copy()
    grad_b[label] -= 1.0
    return np.outer(grad_b, x), grad_b


def dlg_invert(
    grad_W: Matrix,
    grad_b: np.ndarray,
    target: Optional[np.ndarray] = None,
    max_value: Optional[float] = None,
) -> DlgResult:
    """Recover (x, y) from single-sample head gradients.

    y is the most negative grad_b entry; x = grad_W[k]/grad_b[k] for the
    k with the largest |grad_b[k]|. With `target` the PSNR is scored, using
    max |target| as peak unless `max_value` is given.
    """
    grad_W = np.asarray(grad_W, dtype=np.float64)
    grad_b = np.asarray(grad_b, dtype=np.float64).reshape(-1)
    if grad_W.ndim != 2 or grad_W.shape[0] != grad_b.size:
        raise ShapeError(f"grad_W {grad_W.shape} does not match grad_b {grad_b.shape}")
    if not np.any(grad_b):
        raise DegenerateGradientError("grad_b is all zero; the sample is already fit exactly")

    label = int(np.argmin(grad_b))
    k = int(np.argmax(np.abs(grad_b)))
    reconstruction = grad_W[k] / grad_b[k]

    psnr_db = None
    if target is not None:
        target = np.asarray(target, dtype=np.float64).reshape(-1)
        if max_value is None:
            peak = float(np.max(np.abs(target))) if target.size else 0.0
            max_value = peak if peak > 0 else 1.0
        psnr_db = psnr(reconstruction, target, max_value)
    return DlgResult(reconstruction=reconstruction, label=label, psnr_db=psnr_db)


def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
    """10·log10(max²/MSE); +inf when the inputs are equal"""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.size != b.size:
        raise ShapeError(f"Cannot compare vectors of length {a.size} and {b.size}")
    mse = float(np.mean((a - b) ** 2)) if a.size else 0.0
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value ** 2 / mse)


def attack_client(
    model: MlpModel,
    inputs: Matrix,
    labels: np.ndarray,
    client_id: int,
    round_index: int,
    dp: Optional[DpConfig],
    rng: np.random.Generator,
    sample: int = 0,
) -> Dict[str, Any]:
    """Run the head inversion against one training sample of a client.

    The gradient pair is privatised with `dp` (when enabled) before the attack
    sees it, as it would be on the uplink.
    """
    reps, _ = forward(model, np.asarray(inputs)[sample:sample + 1])
    rep = reps[0]
    label = int(labels[sample])
    grad_W, grad_b = head_gradients(model.W2.T, model.b2, rep, label)

    if dp is not None and dp.enabled:
        packed = ParamVector.from_arrays([("grad_W", grad_W, "head"), ("grad_b", grad_b, "head")])
        noised = dp_privatize(packed, dp, rng)
        grad_W, grad_b = noised.view("grad_W"), noised.view("grad_b")

    report: Dict[str, Any] = {"client": client_id, "round": round_index}
    try:
        result = dlg_invert(grad_W, grad_b, target=rep)
    except DegenerateGradientError:
        logger.debug(f"Client {client_id}: degenerate head gradient, nothing to invert")
        report.update(psnr_db=None, exact=False, label_correct=False)
        return report

    exact = result.psnr_db is not None and math.isinf(result.psnr_db)
    report.update(
        psnr_db=None if exact else result.psnr_db,
        exact=exact,
        label_correct=result.label == label,
    )
    return report
