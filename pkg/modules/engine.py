#!/usr/bin/env python3
"""
🔁 Federated Round Engine
=========================
Round-based server/client state machine. Each round samples clients, asks
the active algorithm plugin for per-client payloads, runs local training
(optionally on a thread pool), validates the returned updates, aggregates
them in ascending client-id order and evaluates.

Reduction order is fixed, so the number of worker threads can never change
a result.
"""

import csv
import io
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from pydantic import BaseModel, Field, field_validator

from .datagen import Dataset, Scenario
from .errors import AggregationError, ConfigError, ContractViolation, DivergenceError, LayoutError
from .numcore import (
    Batch,
    Matrix,
    MlpModel,
    ParamVector,
    derive_rng,
    init_model,
    predict,
    sub,
)
from .privacy import DpConfig, dp_privatize

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ["round", "global_acc", "personal_acc", "train_loss", "uplink_floats"]

Predictor = Callable[[Matrix], np.ndarray]


# =============================================================================
# ⚙️ RUN CONFIGURATION
# =============================================================================


class RunConfig(BaseModel):
    """Hyperparameters of one federated training run"""

    algorithm: str = "fedavg"
    num_rounds: int = Field(100, ge=1)
    num_clients: Optional[int] = Field(None, ge=1)
    join_ratio: float = Field(1.0, gt=0, le=1)
    local_epochs: int = Field(1, ge=0)
    batch_size: int = Field(10, ge=1)
    learning_rate: float = Field(0.05, gt=0)
    eval_interval: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    hyperparams: Dict[str, float] = Field(default_factory=dict)

    @field_validator("hyperparams")
    @classmethod
    def _finite_hyperparams(cls, value: Dict[str, float]) -> Dict[str, float]:
        for name, v in value.items():
            if not math.isfinite(v):
                raise ValueError(f"hyperparameter {name} must be finite")
        return value

    def participants(self, num_clients: Optional[int] = None) -> int:
        n = num_clients if num_clients is not None else self.num_clients
        if n is None:
            raise ConfigError("num_clients is not known yet")
        return int(math.floor(self.join_ratio * n + 1e-9))

    def bind(self, num_clients: int) -> "RunConfig":
        """Copy with num_clients fixed to the scenario's client count"""
        if self.num_clients is not None and self.num_clients != num_clients:
            raise ConfigError(
                f"num_clients={self.num_clients} but the scenario has {num_clients} clients"
            )
        if self.participants(num_clients) < 1:
            raise ConfigError(
                f"join_ratio={self.join_ratio} selects no client out of {num_clients}"
            )
        return self.model_copy(update={"num_clients": num_clients})


# =============================================================================
# 📨 PAYLOADS AND UPDATES
# =============================================================================


class PayloadKind(str, Enum):
    FULL = "full"
    SEGMENTS = "segments"
    PROTOTYPES = "prototypes"
    CLASS_LOGITS = "class_logits"
    CONTROL = "control"
    CLOUD = "cloud"


@dataclass
class Message:
    """Tagged server→client payload or client→server update.

    FULL / CLOUD carry a full ParamVector, SEGMENTS a segment subset,
    CONTROL a parameter delta plus a control-variate delta, PROTOTYPES and
    CLASS_LOGITS a class → vector table with per-class sample counts.
    """
    kind: PayloadKind
    params: Optional[ParamVector] = None
    control: Optional[ParamVector] = None
    table: Optional[Dict[int, np.ndarray]] = None
    counts: Optional[Dict[int, int]] = None
    client_id: Optional[int] = None
    num_samples: int = 0
    train_loss: float = 0.0

    def num_floats(self) -> int:
        """Floats on the wire; a table entry costs its vector plus one count"""
        total = 0
        if self.params is not None:
            total += self.params.size
        if self.control is not None:
            total += self.control.size
        if self.table:
            total += sum(int(np.asarray(v).size) + 1 for v in self.table.values())
        return total

    def is_finite(self) -> bool:
        if self.params is not None and not self.params.is_finite():
            return False
        if self.control is not None and not self.control.is_finite():
            return False
        if self.table:
            return all(bool(np.all(np.isfinite(v))) for v in self.table.values())
        return math.isfinite(self.train_loss)


Payload = Message
Update = Message


# =============================================================================
# 🖥️ CLIENT / SERVER STATE
# =============================================================================


@dataclass
class ClientState:
    """Everything one client owns between rounds"""
    client_id: int
    train: Dataset
    test: Dataset
    local: MlpModel
    rng: np.random.Generator
    personal: Optional[MlpModel] = None
    state: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_train(self) -> int:
        return self.train.size

    @property
    def n_test(self) -> int:
        return self.test.size

    def class_counts(self) -> np.ndarray:
        return self.train.class_histogram()


@dataclass
class ServerState:
    global_model: MlpModel
    config: RunConfig
    num_clients: int
    rng: np.random.Generator
    round: int = 0
    state: Dict[str, Any] = field(default_factory=dict)

    def stream(self, *keys: Union[int, str]) -> np.random.Generator:
        """Generator derived from (seed, keys); independent of the sampling stream"""
        return derive_rng(self.config.seed, *keys)


@dataclass
class RoundMetrics:
    round: int
    global_acc: Optional[float]
    personal_acc: Optional[float]
    train_loss: float
    uplink_floats: int
    participants: List[int] = field(default_factory=list)
    fallback_clients: List[int] = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def evaluated(self) -> bool:
        return self.global_acc is not None

    def csv_row(self) -> List[str]:
        return [
            str(self.round),
            f"{self.global_acc:.6f}",
            f"{self.personal_acc:.6f}",
            f"{self.train_loss:.6f}",
            str(self.uplink_floats),
        ]


# =============================================================================
# 🧰 LOCAL TRAINING HELPERS
# =============================================================================


def minibatches(data: Dataset, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """One shuffled pass over `data`"""
    order = rng.permutation(data.size)
    for start in range(0, data.size, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(data.inputs[idx], data.labels[idx])


def epoch_batches(data: Dataset, epochs: int, batch_size: int, rng: np.random.Generator) -> List[Batch]:
    """All minibatches of `epochs` passes, drawn up front"""
    batches: List[Batch] = []
    for _ in range(epochs):
        batches.extend(minibatches(data, batch_size, rng))
    return batches


def full_batch(data: Dataset) -> Batch:
    return Batch(data.inputs, data.labels)


# =============================================================================
# ➗ AGGREGATION
# =============================================================================


def weighted_average(
    updates: Sequence[Tuple[ParamVector, float]],
    segment_filter: Union[None, str, Sequence[str]] = None,
    base: Optional[ParamVector] = None,
) -> ParamVector:
    """Σ (n_i/Σn)·p_i over the filtered segments; others come from `base`.

    Evaluated as p_1 + Σ_{i>1} (n_i/Σn)(p_i − p_1) so identical inputs and a
    single update reproduce the input exactly.
    """
    if not updates:
        raise AggregationError("weighted_average needs at least one update")
    weights = np.asarray([float(n) for _, n in updates])
    if np.any(weights < 0) or not np.all(np.isfinite(weights)) or weights.sum() <= 0:
        raise AggregationError(f"Invalid aggregation weights {weights.tolist()}")

    first = updates[0][0]
    for params, _ in updates[1:]:
        first.check_layout(params)
    base = first if base is None else base
    fractions = weights / weights.sum()

    out = base.data.copy()
    for name in first.resolve(segment_filter):
        src = first.slice(name)
        dst = base.slice(name)
        if src.stop - src.start != dst.stop - dst.start:
            raise LayoutError(f"Segment '{name}' differs in size between update and base")
        acc = first.data[src].copy()
        for (params, _), frac in zip(updates[1:], fractions[1:]):
            acc += frac * (params.data[src] - first.data[src])
        out[dst] = acc
    return base.with_data(out)


# =============================================================================
# 🎯 CLIENT SAMPLING AND EVALUATION
# =============================================================================


def sample_clients(server: ServerState, config: RunConfig) -> List[int]:
    """floor(join_ratio·N) distinct ids, uniform without replacement, ascending"""
    count = config.participants(server.num_clients)
    chosen = server.rng.choice(server.num_clients, size=count, replace=False)
    return sorted(int(c) for c in chosen)


def model_predictor(model: MlpModel) -> Predictor:
    return lambda inputs: predict(model, inputs)


def _as_predictor(designated: Union[None, MlpModel, Predictor]) -> Optional[Predictor]:
    if designated is None:
        return None
    if isinstance(designated, MlpModel):
        return model_predictor(designated)
    return designated


def evaluate_global(server: ServerState, clients: Sequence[ClientState]) -> float:
    """Global model accuracy over the union of client test sets"""
    correct = 0
    total = 0
    for client in clients:
        if client.n_test == 0:
            continue
        correct += int(np.sum(predict(server.global_model, client.test.inputs) == client.test.labels))
        total += client.n_test
    return correct / total if total else 0.0


def evaluate_personalized(
    server: ServerState,
    clients: Sequence[ClientState],
    plugin: Any,
) -> Tuple[float, List[int]]:
    """Sample-weighted accuracy of each client's designated inference model.

    Returns (accuracy, ids of clients that fell back to their local model).
    """
    correct = 0
    total = 0
    fallback: List[int] = []
    for client in clients:
        if client.n_test == 0:
            continue
        predictor = _as_predictor(plugin.inference_model(server, client))
        if predictor is None:
            fallback.append(client.client_id)
            predictor = model_predictor(client.local)
        correct += int(np.sum(predictor(client.test.inputs) == client.test.labels))
        total += client.n_test
    if fallback:
        logger.warning(f"{len(fallback)} clients have no personal model; evaluated their local model")
    return (correct / total if total else 0.0), fallback


# =============================================================================
# ✅ CONTRACT CHECKS
# =============================================================================


def _check_params(params: Optional[ParamVector], reference: ParamVector, cid: int, what: str, subset: bool = False) -> None:
    if params is None:
        raise ContractViolation(f"{what} missing", client_id=cid)
    if subset:
        for seg in params.segments:
            try:
                mine = reference.segment(seg.name)
            except LayoutError as e:
                raise ContractViolation(f"{what}: {e}", client_id=cid) from None
            if mine.shape != seg.shape:
                raise ContractViolation(
                    f"{what}: segment {seg.name} has shape {seg.shape}, expected {mine.shape}",
                    client_id=cid,
                )
    elif not params.same_layout(reference):
        raise ContractViolation(
            f"{what}: layout {params.names} does not match the global model {reference.names}",
            client_id=cid,
        )


def validate_update(update: Update, expected_kind: PayloadKind, cid: int, reference: ParamVector) -> Update:
    """Enforce the plugin contract on one returned update"""
    if not isinstance(update, Message):
        raise ContractViolation(f"local_train returned {type(update).__name__}, not an update", client_id=cid)
    if update.kind != expected_kind:
        raise ContractViolation(
            f"update kind {update.kind.value} but aggregate expects {expected_kind.value}",
            client_id=cid,
        )
    if update.client_id is None:
        update.client_id = cid
    elif update.client_id != cid:
        raise ContractViolation(f"update claims to come from client {update.client_id}", client_id=cid)
    if update.num_samples < 1:
        raise ContractViolation("update reports no training samples", client_id=cid)

    if update.kind in (PayloadKind.FULL, PayloadKind.CLOUD):
        _check_params(update.params, reference, cid, "parameters")
    elif update.kind == PayloadKind.SEGMENTS:
        _check_params(update.params, reference, cid, "segments", subset=True)
    elif update.kind == PayloadKind.CONTROL:
        _check_params(update.params, reference, cid, "model delta")
        _check_params(update.control, reference, cid, "control delta")
    elif update.table is None or update.counts is None:
        raise ContractViolation(f"{update.kind.value} update without table/counts", client_id=cid)

    if not update.is_finite():
        raise DivergenceError("non-finite values in update", client_id=cid)
    return update


def privatize_update(update: Update, payload: Payload, dp: DpConfig, rng: np.random.Generator) -> Update:
    """Clip and noise the parameter change an update carries; tables pass through"""
    if not dp.enabled or update.params is None:
        return update
    if update.kind == PayloadKind.CONTROL:
        update.params = dp_privatize(update.params, dp, rng)
        return update
    if payload.params is None:
        return update
    reference = payload.params
    if not reference.same_layout(update.params):
        reference = reference.select(update.params.names)
    delta = dp_privatize(sub(update.params, reference), dp, rng)
    update.params = reference.with_data(reference.data + delta.data)
    return update


# =============================================================================
# 🔄 ROUND LOOP
# =============================================================================


def run_round(
    server: ServerState,
    clients: Sequence[ClientState],
    plugin: Any,
    config: RunConfig,
    dp: Optional[DpConfig] = None,
    workers: int = 1,
    force_eval: bool = False,
) -> RoundMetrics:
    """Sample → payloads → local training → validate → (DP) → aggregate → evaluate"""
    started = time.perf_counter()
    server.round += 1
    rnd = server.round

    selected = sample_clients(server, config)
    payloads = {cid: plugin.server_payload(server, cid) for cid in selected}

    def train_one(cid: int) -> Update:
        return plugin.local_train(clients[cid], payloads[cid], config)

    if workers > 1 and len(selected) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = list(pool.map(train_one, selected))
    else:
        raw = [train_one(cid) for cid in selected]

    reference = server.global_model.params
    updates = []
    for cid, update in zip(selected, raw):
        update = validate_update(update, plugin.update_kind, cid, reference)
        if dp is not None and dp.enabled:
            update = privatize_update(update, payloads[cid], dp, server.stream("dp", rnd, cid))
        updates.append(update)

    plugin.aggregate(server, updates)
    if not server.global_model.params.is_finite():
        raise DivergenceError(f"global model became non-finite in round {rnd}")

    train_loss = float(np.mean([u.train_loss for u in updates])) if updates else 0.0
    uplink = int(sum(u.num_floats() for u in updates))

    global_acc = personal_acc = None
    fallback: List[int] = []
    if force_eval or rnd % config.eval_interval == 0:
        global_acc = evaluate_global(server, clients)
        personal_acc, fallback = evaluate_personalized(server, clients, plugin)

    metrics = RoundMetrics(
        round=rnd,
        global_acc=global_acc,
        personal_acc=personal_acc,
        train_loss=train_loss,
        uplink_floats=uplink,
        participants=selected,
        fallback_clients=fallback,
        elapsed_s=time.perf_counter() - started,
    )
    if metrics.evaluated:
        logger.info(
            f"Round {rnd}: global={global_acc:.4f} personal={personal_acc:.4f} "
            f"loss={train_loss:.4f} uplink={uplink}"
        )
    return metrics


# =============================================================================
# 🧪 SIMULATION
# =============================================================================


class Simulation:
    """A scenario, a run config and a plugin, wired into server and client state"""

    def __init__(
        self,
        scenario: Scenario,
        config: RunConfig,
        plugin: Any = None,
        hidden_dim: int = 32,
        dp: Optional[DpConfig] = None,
        workers: int = 1,
    ):
        if hidden_dim < 1:
            raise ConfigError("hidden_dim must be ≥ 1")
        self.scenario = scenario
        self.config = config.bind(scenario.num_clients)
        self.dp = dp
        self.workers = max(1, int(workers))

        if plugin is None:
            from .algorithms import create_plugin

            plugin = create_plugin(self.config.algorithm, self.config.hyperparams)
        self.plugin = plugin

        seed = self.config.seed
        model = init_model(scenario.input_dim, hidden_dim, scenario.num_classes, derive_rng(seed, "init"))
        self.server = ServerState(
            global_model=model,
            config=self.config,
            num_clients=scenario.num_clients,
            rng=derive_rng(seed, "server"),
        )
        self.clients = [
            ClientState(
                client_id=c.client_id,
                train=c.train,
                test=c.test,
                local=model,
                rng=derive_rng(seed, "train", c.client_id),
            )
            for c in scenario.clients
        ]
        for position, client in enumerate(self.clients):
            if client.client_id != position:
                raise ConfigError(f"Scenario client ids must be 0..N-1, found {client.client_id} at {position}")
        self.plugin.init(self.server, self.clients)
        self.history: List[RoundMetrics] = []

    def step(self) -> RoundMetrics:
        last = self.server.round + 1 == self.config.num_rounds
        metrics = run_round(
            self.server,
            self.clients,
            self.plugin,
            self.config,
            dp=self.dp,
            workers=self.workers,
            force_eval=last,
        )
        self.history.append(metrics)
        return metrics

    def run(self, on_round: Optional[Callable[[RoundMetrics], None]] = None) -> List[RoundMetrics]:
        logger.info(
            f"Running {self.plugin.name} for {self.config.num_rounds} rounds on "
            f"{self.server.num_clients} clients"
        )
        while self.server.round < self.config.num_rounds:
            metrics = self.step()
            if on_round is not None:
                on_round(metrics)
        return self.history

    @property
    def evaluated(self) -> List[RoundMetrics]:
        return [m for m in self.history if m.evaluated]


# =============================================================================
# 📝 METRICS CSV
# =============================================================================


def metrics_csv(rows: Sequence[RoundMetrics]) -> str:
    """CSV text with one line per evaluated round"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        if row.evaluated:
            writer.writerow(row.csv_row())
    return buffer.getvalue()
