#!/usr/bin/env python3
"""
🧮 Numeric Core Module
======================
Flat parameter vectors with named segments, a two-layer ReLU MLP with an
explicit backward pass, softmax cross-entropy and SGD.

Every model exchanged between server and clients is a ParamVector. Segments
are tagged "body" (representation layer) or "head" (classifier), which is the
axis the model-splitting algorithms divide along.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging
import zlib

import numpy as np

from .errors import LayoutError, ShapeError

logger = logging.getLogger(__name__)

Matrix = np.ndarray

BODY = "body"
HEAD = "head"
GROUPS = (BODY, HEAD)


# =============================================================================
# 📦 PARAMETER VECTORS
# =============================================================================


@dataclass(frozen=True)
class Segment:
    """One named, contiguous slice of a ParamVector"""
    name: str
    offset: int
    length: int
    shape: Tuple[int, ...]
    group: str

    @property
    def stop(self) -> int:
        return self.offset + self.length


class ParamVector:
    """Read-only flat float64 vector partitioned into named segments.

    Operations never mutate a ParamVector; they return new ones.
    """

    __slots__ = ("segments", "data", "_index")

    def __init__(self, segments: Sequence[Segment], data: np.ndarray):
        segments = tuple(segments)
        arr = np.array(data, dtype=np.float64, copy=True).reshape(-1)

        index = {}
        cursor = 0
        for seg in segments:
            if seg.name in index:
                raise LayoutError(f"Duplicate segment name '{seg.name}'")
            if seg.group not in GROUPS:
                raise LayoutError(f"Segment '{seg.name}' has unknown group '{seg.group}'")
            if seg.offset != cursor:
                raise LayoutError(f"Segment '{seg.name}' is not contiguous (offset {seg.offset}, expected {cursor})")
            if int(np.prod(seg.shape, dtype=np.int64)) != seg.length:
                raise LayoutError(f"Segment '{seg.name}' shape {seg.shape} does not match length {seg.length}")
            index[seg.name] = seg
            cursor = seg.stop

        if cursor != arr.size:
            raise LayoutError(f"Segments cover {cursor} values but data has {arr.size}")

        arr.setflags(write=False)
        self.segments = segments
        self.data = arr
        self._index = index

    # -------------------------------------------------------------------------
    # construction
    # -------------------------------------------------------------------------

    @classmethod
    def from_arrays(cls, parts: Sequence[Tuple[str, np.ndarray, str]]) -> "ParamVector":
        """Build from (name, array, group) triples, in order"""
        segments = []
        chunks = []
        offset = 0
        for name, array, group in parts:
            array = np.asarray(array, dtype=np.float64)
            segments.append(Segment(name, offset, array.size, tuple(array.shape), group))
            chunks.append(array.reshape(-1))
            offset += array.size
        data = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(segments, data)

    def assemble(self, parts: Dict[str, np.ndarray]) -> "ParamVector":
        """New vector with this layout, filled segment by segment from `parts`"""
        out = np.empty(self.size, dtype=np.float64)
        for seg in self.segments:
            if seg.name not in parts:
                raise LayoutError(f"Missing segment '{seg.name}'")
            value = np.asarray(parts[seg.name], dtype=np.float64)
            if value.size != seg.length:
                raise LayoutError(f"Segment '{seg.name}' expects {seg.length} values, got {value.size}")
            out[seg.offset:seg.stop] = value.reshape(-1)
        return ParamVector(self.segments, out)

    def with_data(self, data: np.ndarray) -> "ParamVector":
        return ParamVector(self.segments, data)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(self.segments, np.zeros(self.size))

    def full_like(self, value: float) -> "ParamVector":
        return ParamVector(self.segments, np.full(self.size, float(value)))

    # -------------------------------------------------------------------------
    # inspection
    # -------------------------------------------------------------------------

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def names(self) -> List[str]:
        return [seg.name for seg in self.segments]

    def segment(self, name: str) -> Segment:
        try:
            return self._index[name]
        except KeyError:
            raise LayoutError(f"No segment named '{name}' (have {self.names})") from None

    def slice(self, name: str) -> slice:
        seg = self.segment(name)
        return slice(seg.offset, seg.stop)

    def view(self, name: str) -> np.ndarray:
        seg = self.segment(name)
        return self.data[seg.offset:seg.stop].reshape(seg.shape)

    def group_names(self, group: str) -> List[str]:
        if group not in GROUPS:
            raise LayoutError(f"Unknown segment group '{group}'")
        return [seg.name for seg in self.segments if seg.group == group]

    def resolve(self, selector: Union[None, str, Iterable[str]]) -> List[str]:
        """Expand a selector (None = all, group name, or segment names) to segment names"""
        if selector is None:
            return self.names
        if isinstance(selector, str):
            selector = [selector]
        wanted = set()
        for item in selector:
            if item in GROUPS:
                wanted.update(self.group_names(item))
            else:
                wanted.add(self.segment(item).name)
        return [name for name in self.names if name in wanted]

    def same_layout(self, other: "ParamVector") -> bool:
        return self.segments is other.segments or self.segments == other.segments

    def check_layout(self, other: "ParamVector") -> None:
        if not self.same_layout(other):
            raise LayoutError(f"Layout mismatch: {self.names} vs {other.names}")

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    # -------------------------------------------------------------------------
    # segment subsets
    # -------------------------------------------------------------------------

    def select(self, selector: Union[str, Iterable[str]]) -> "ParamVector":
        """Sub-vector holding only the selected segments (offsets re-based)"""
        names = self.resolve(selector)
        return ParamVector.from_arrays(
            [(name, self.view(name), self.segment(name).group) for name in names]
        )

    def merge(self, sub: "ParamVector") -> "ParamVector":
        """Copy of self with every segment of `sub` overwritten"""
        out = self.data.copy()
        for seg in sub.segments:
            mine = self.segment(seg.name)
            if mine.shape != seg.shape:
                raise LayoutError(f"Segment '{seg.name}' shape {seg.shape} != {mine.shape}")
            out[mine.offset:mine.stop] = sub.data[seg.offset:seg.stop]
        return ParamVector(self.segments, out)

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        parts = ", ".join(f"{s.name}{list(s.shape)}:{s.group}" for s in self.segments)
        return f"ParamVector({parts})"


# =============================================================================
# ➕ VECTOR OPERATIONS
# =============================================================================


def axpy(a: float, x: ParamVector, y: ParamVector) -> ParamVector:
    """a·x + y"""
    x.check_layout(y)
    return y.with_data(a * x.data + y.data)


def sub(x: ParamVector, y: ParamVector) -> ParamVector:
    """x − y"""
    x.check_layout(y)
    return x.with_data(x.data - y.data)


def scale(a: float, x: ParamVector) -> ParamVector:
    return x.with_data(a * x.data)


def dot(x: ParamVector, y: ParamVector) -> float:
    x.check_layout(y)
    return float(np.dot(x.data, y.data))


def sq_norm(x: ParamVector) -> float:
    return float(np.dot(x.data, x.data))


def hadamard(x: ParamVector, y: ParamVector) -> ParamVector:
    x.check_layout(y)
    return x.with_data(x.data * y.data)


def clip01(x: Union[ParamVector, float]) -> Union[ParamVector, float]:
    """Clamp every coordinate (or a plain scalar) to [0, 1]"""
    if isinstance(x, ParamVector):
        return x.with_data(np.clip(x.data, 0.0, 1.0))
    return min(1.0, max(0.0, float(x)))


def sgd_step(
    params: ParamVector,
    grad: ParamVector,
    lr: float,
    mask: Optional[Iterable[str]] = None,
) -> ParamVector:
    """p − lr·g on every segment not named in `mask`"""
    params.check_layout(grad)
    out = params.data - lr * grad.data
    if mask:
        for name in mask:
            sl = params.slice(name)
            out[sl] = params.data[sl]
    return params.with_data(out)


# =============================================================================
# 🧠 MLP MODEL
# =============================================================================


@dataclass(frozen=True)
class Batch:
    """A minibatch of inputs and integer labels"""
    inputs: Matrix
    labels: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ShapeError(f"Batch inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.inputs.shape[0]:
            raise ShapeError(
                f"Batch has {self.inputs.shape[0]} inputs but labels of shape {self.labels.shape}"
            )
        if self.inputs.shape[0] < 1:
            raise ShapeError("Batch must hold at least one sample")

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])


def mlp_layout(input_dim: int, hidden_dim: int, num_classes: int) -> ParamVector:
    """Zero parameters with the W1,b1 (body) / W2,b2 (head) layout"""
    return ParamVector.from_arrays([
        ("W1", np.zeros((input_dim, hidden_dim)), BODY),
        ("b1", np.zeros(hidden_dim), BODY),
        ("W2", np.zeros((hidden_dim, num_classes)), HEAD),
        ("b2", np.zeros(num_classes), HEAD),
    ])


@dataclass(frozen=True)
class MlpModel:
    """input → ReLU(x·W1 + b1) → ·W2 + b2 → logits"""
    input_dim: int
    hidden_dim: int
    num_classes: int
    params: ParamVector

    def __post_init__(self):
        expected = {
            "W1": (self.input_dim, self.hidden_dim),
            "b1": (self.hidden_dim,),
            "W2": (self.hidden_dim, self.num_classes),
            "b2": (self.num_classes,),
        }
        if self.params.names != list(expected):
            raise LayoutError(f"MLP parameters must be W1,b1,W2,b2, got {self.params.names}")
        for name, shape in expected.items():
            if self.params.segment(name).shape != shape:
                raise LayoutError(
                    f"Segment {name} has shape {self.params.segment(name).shape}, expected {shape}"
                )

    def with_params(self, params: ParamVector) -> "MlpModel":
        self.params.check_layout(params)
        return MlpModel(self.input_dim, self.hidden_dim, self.num_classes, params)

    @property
    def W1(self) -> Matrix:
        return self.params.view("W1")

    @property
    def b1(self) -> np.ndarray:
        return self.params.view("b1")

    @property
    def W2(self) -> Matrix:
        return self.params.view("W2")

    @property
    def b2(self) -> np.ndarray:
        return self.params.view("b2")


def zero_model(input_dim: int, hidden_dim: int, num_classes: int) -> MlpModel:
    return MlpModel(input_dim, hidden_dim, num_classes, mlp_layout(input_dim, hidden_dim, num_classes))


def init_model(input_dim: int, hidden_dim: int, num_classes: int, rng: np.random.Generator) -> MlpModel:
    """He-initialised weights, zero biases"""
    layout = mlp_layout(input_dim, hidden_dim, num_classes)
    params = layout.assemble({
        "W1": rng.normal(0.0, np.sqrt(2.0 / input_dim), size=(input_dim, hidden_dim)),
        "b1": np.zeros(hidden_dim),
        "W2": rng.normal(0.0, np.sqrt(1.0 / hidden_dim), size=(hidden_dim, num_classes)),
        "b2": np.zeros(num_classes),
    })
    return MlpModel(input_dim, hidden_dim, num_classes, params)


# =============================================================================
# ➡️ FORWARD / LOSS / BACKWARD
# =============================================================================


def forward(model: MlpModel, inputs: Matrix) -> Tuple[Matrix, Matrix]:
    """Return (post-ReLU representations, logits)"""
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[1] != model.input_dim:
        raise ShapeError(f"Expected inputs (n, {model.input_dim}), got {inputs.shape}")
    reps = np.maximum(inputs @ model.W1 + model.b1, 0.0)
    logits = reps @ model.W2 + model.b2
    return reps, logits


def logsumexp(logits: Matrix) -> np.ndarray:
    m = np.max(logits, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True)))[:, 0]


def softmax(logits: Matrix) -> Matrix:
    z = logits - np.max(logits, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def _check_labels(logits: Matrix, labels: np.ndarray) -> Tuple[Matrix, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.ndim != 1 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"Logits {logits.shape} and labels {labels.shape} disagree")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError(f"Labels must lie in [0, {logits.shape[1]})")
    return logits, labels


def loss_ce(logits: Matrix, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy, log-sum-exp stabilised"""
    logits, labels = _check_labels(logits, labels)
    picked = logits[np.arange(labels.size), labels]
    return float(np.mean(logsumexp(logits) - picked))


def ce_logit_grad(logits: Matrix, labels: np.ndarray, adjust: Optional[np.ndarray] = None) -> Matrix:
    """∂ mean-CE / ∂ logits; `adjust` is added to every row before the softmax"""
    logits, labels = _check_labels(logits, labels)
    z = logits if adjust is None else logits + adjust
    grad = softmax(z)
    grad[np.arange(labels.size), labels] -= 1.0
    return grad / labels.size


def backprop(
    model: MlpModel,
    inputs: Matrix,
    reps: Matrix,
    dlogits: Matrix,
    drep: Optional[Matrix] = None,
) -> ParamVector:
    """Gradient of any loss given its cotangents w.r.t. logits (and optionally representations)"""
    dW2 = reps.T @ dlogits
    db2 = np.sum(dlogits, axis=0)
    dh = dlogits @ model.W2.T
    if drep is not None:
        dh = dh + drep
    dh = dh * (reps > 0.0)
    dW1 = inputs.T @ dh
    db1 = np.sum(dh, axis=0)
    return model.params.assemble({"W1": dW1, "b1": db1, "W2": dW2, "b2": db2})


def backward(model: MlpModel, batch: Batch) -> ParamVector:
    """Gradient of the mean CE loss over `batch`"""
    reps, logits = forward(model, batch.inputs)
    return backprop(model, batch.inputs, reps, ce_logit_grad(logits, batch.labels))


def loss_and_grad(model: MlpModel, batch: Batch) -> Tuple[float, ParamVector]:
    reps, logits = forward(model, batch.inputs)
    grad = backprop(model, batch.inputs, reps, ce_logit_grad(logits, batch.labels))
    return loss_ce(logits, batch.labels), grad


def predict(model: MlpModel, inputs: Matrix) -> np.ndarray:
    """Arg-max class per row (lowest index on ties)"""
    _, logits = forward(model, inputs)
    return np.argmax(logits, axis=1)


def accuracy(model: MlpModel, inputs: Matrix, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(predict(model, inputs) == labels))


# =============================================================================
# 🎲 SEEDING
# =============================================================================


def stream_key(name: str) -> int:
    """Stable 32-bit key for a named random stream"""
    return zlib.crc32(name.encode("utf-8"))


def derive_rng(seed: int, *keys: Union[int, str]) -> np.random.Generator:
    """Independent generator for (seed, key...); string keys are hashed with CRC-32"""
    entropy = [int(seed)] + [stream_key(k) if isinstance(k, str) else int(k) for k in keys]
    return np.random.default_rng(entropy)
