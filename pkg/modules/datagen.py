#!/usr/bin/env python3
"""
🗂️ Scenario Generation Module
=============================
Dataset sources (synthetic Gaussians, MNIST IDX files), the heterogeneity
partitioners, per-client train/test splitting and the PFLS on-disk format.

On-disk layout of a scenario directory:

    manifest.json                 JSON manifest (spec, per-client histograms, version)
    client_0000_train.pfls        per-client binary datasets
    client_0000_test.pfls
    ...

Binary client file (little-endian):

    [offset] [type]      [description]
    0000     4 bytes     magic "PFLS"
    0004     u16         format version
    0006     u32         n  (samples)
    0010     u32         d  (input dimension)
    0014     u32         num_classes
    0018     f32 × n·d   inputs, row-major
    ....     u32 × n     labels
"""

import gzip
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .errors import DatasetError, IdxFormatError, InfeasibleScenarioError, ScenarioFormatError
from .numcore import Matrix, derive_rng, stream_key

logger = logging.getLogger(__name__)

FORMAT_MAGIC = b"PFLS"
FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
HEADER = struct.Struct("<4sHIII")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

DIRICHLET_MAX_RETRIES = 100
SPLIT_STREAM = "train_test_split"
SHIFT_STREAM = "feature_shift"

PartitionKind = Literal["pathological", "practical", "feature_shift", "iid"]


# =============================================================================
# 📊 DATA MODELS
# =============================================================================


@dataclass(frozen=True)
class Dataset:
    """Inputs (N × d) with integer class labels"""
    inputs: Matrix
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if inputs.ndim != 2:
            raise DatasetError(f"Inputs must be 2-D, got shape {inputs.shape}")
        if labels.ndim != 1 or labels.shape[0] != inputs.shape[0]:
            raise DatasetError(f"{inputs.shape[0]} inputs but {labels.shape} labels")
        if self.num_classes < 1:
            raise DatasetError("num_classes must be ≥ 1")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DatasetError(f"Labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])

    def class_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes)

    def require_full_support(self) -> "Dataset":
        missing = np.flatnonzero(self.class_histogram() == 0)
        if missing.size:
            raise DatasetError(f"Classes without samples: {missing.tolist()}")
        return self


class PartitionSpec(BaseModel):
    """How a source dataset is split across clients"""

    kind: PartitionKind = "practical"
    num_clients: int = Field(20, ge=1)
    classes_per_client: int = Field(2, ge=1)
    alpha: float = Field(0.1, gt=0)
    shift_strength: float = Field(1.0, ge=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    train_fraction: float = Field(0.75, gt=0, lt=1)
    min_samples_per_client: int = Field(10, ge=0)

    def client_floor(self) -> int:
        """Fewest samples a client may hold: min_samples_per_client, raised so both split sides are non-empty"""
        return max(smallest_splittable(self.train_fraction), self.min_samples_per_client)


@dataclass
class ClientData:
    """One client's share of a scenario"""
    client_id: int
    train: Dataset
    test: Dataset
    source_indices: Optional[np.ndarray] = None

    @property
    def n_train(self) -> int:
        return self.train.size

    @property
    def n_test(self) -> int:
        return self.test.size

    def class_histogram(self) -> np.ndarray:
        return self.train.class_histogram() + self.test.class_histogram()


@dataclass
class Scenario:
    """Per-client train/test datasets plus the generating spec"""
    spec: PartitionSpec
    clients: List[ClientData]
    num_classes: int
    input_dim: int
    name: str = "scenario"
    source: str = "synthetic"
    version: int = FORMAT_VERSION

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    def manifest(self) -> Dict[str, Any]:
        per_client = [
            {
                "client": c.client_id,
                "n_train": c.n_train,
                "n_test": c.n_test,
                "class_hist": c.class_histogram().tolist(),
            }
            for c in self.clients
        ]
        return {
            "format": FORMAT_MAGIC.decode("ascii"),
            "version": self.version,
            "name": self.name,
            "source": self.source,
            "num_classes": self.num_classes,
            "input_dim": self.input_dim,
            "num_clients": self.num_clients,
            "total_samples": int(sum(c.n_train + c.n_test for c in self.clients)),
            "spec": self.spec.model_dump(mode="json"),
            "per_client": per_client,
        }


# =============================================================================
# 🧪 SOURCES
# =============================================================================


def synth_gaussian(
    num_classes: int,
    dim: int,
    per_class: int,
    spread: float,
    seed: int,
    separation: float = 6.0,
) -> Dataset:
    """Isotropic Gaussian blobs, one per class.

    Class means are random directions rescaled so the closest pair sits
    exactly `separation × spread` apart (or `separation` when spread is 0).
    """
    if num_classes < 1 or dim < 1 or per_class < 1:
        raise DatasetError("num_classes, dim and per_class must all be ≥ 1")
    if spread < 0:
        raise DatasetError("spread must be ≥ 0")
    if separation < 4.0:
        raise DatasetError("separation must be ≥ 4 (in units of spread)")

    rng = np.random.default_rng(seed)
    means = rng.normal(size=(num_classes, dim))
    if num_classes > 1:
        gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        closest = float(np.min(gaps[np.triu_indices(num_classes, k=1)]))
        if closest == 0.0:
            raise DatasetError("Degenerate class means; choose another seed")
        target = separation * (spread if spread > 0 else 1.0)
        means = means * (target / closest)
    else:
        means = np.zeros((1, dim))

    inputs = np.empty((num_classes * per_class, dim))
    for c in range(num_classes):
        noise = rng.normal(size=(per_class, dim))
        inputs[c * per_class:(c + 1) * per_class] = means[c] + spread * noise
    labels = np.repeat(np.arange(num_classes), per_class)
    return Dataset(inputs, labels, num_classes).require_full_support()


def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx_images(path: Union[str, Path]) -> np.ndarray:
    """IDX image file → (count, rows·cols) float array scaled to [0, 1]"""
    data = _read_bytes(path)
    if len(data) < 16:
        raise IdxFormatError(f"{path}: truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    pixels = count * rows * cols
    if len(data) < 16 + pixels:
        raise IdxFormatError(f"{path}: truncated, expected {pixels} pixel bytes, found {len(data) - 16}")
    raw = np.frombuffer(data, dtype=np.uint8, count=pixels, offset=16)
    return raw.reshape(count, rows * cols).astype(np.float64) / 255.0


def read_idx_labels(path: Union[str, Path]) -> np.ndarray:
    """IDX label file → int64 labels"""
    data = _read_bytes(path)
    if len(data) < 8:
        raise IdxFormatError(f"{path}: truncated header")
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    if len(data) < 8 + count:
        raise IdxFormatError(f"{path}: truncated, expected {count} labels, found {len(data) - 8}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path]) -> Dataset:
    """Parse an IDX image/label pair (plain or gzipped)"""
    inputs = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if inputs.shape[0] != labels.shape[0]:
        raise IdxFormatError(f"{inputs.shape[0]} images but {labels.shape[0]} labels")
    num_classes = int(labels.max()) + 1 if labels.size else 1
    logger.info(f"Loaded {labels.size} IDX samples of dimension {inputs.shape[1]}")
    return Dataset(inputs, labels, num_classes).require_full_support()


# =============================================================================
# ✂️ CLIENT ASSIGNMENT
# =============================================================================


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _dirichlet(rng: np.random.Generator, alpha: float, size: int) -> np.ndarray:
    # gamma draws underflow to zero for tiny alpha; fall back to a single owner
    draws = rng.standard_gamma(alpha, size=size)
    total = float(draws.sum())
    if not math.isfinite(total) or total <= 0.0:
        proportions = np.zeros(size)
        proportions[int(rng.integers(size))] = 1.0
        return proportions
    return draws / total


def _finish(buckets: List[List[np.ndarray]]) -> List[np.ndarray]:
    out = []
    for parts in buckets:
        idx = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        out.append(np.sort(idx.astype(np.int64)))
    return out


def assign_iid(labels: np.ndarray, num_classes: int, num_clients: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Deal every class round-robin so label histograms are near-uniform"""
    buckets = [[] for _ in range(num_clients)]
    offset = 0
    for c in range(num_classes):
        idx = rng.permutation(np.flatnonzero(labels == c))
        owner = (offset + np.arange(idx.size)) % num_clients
        for i in range(num_clients):
            buckets[i].append(idx[owner == i])
        offset += idx.size
    return _finish(buckets)


def assign_pathological(labels: np.ndarray, num_classes: int, spec: PartitionSpec, rng: np.random.Generator) -> List[np.ndarray]:
    """Each client owns exactly `classes_per_client` classes; classes are sharded among owners"""
    k, m = spec.classes_per_client, spec.num_clients
    if k > num_classes:
        raise InfeasibleScenarioError(f"classes_per_client={k} exceeds num_classes={num_classes}")
    if m * k < num_classes:
        raise InfeasibleScenarioError(
            f"num_clients × classes_per_client = {m * k} cannot cover {num_classes} classes"
        )

    order = rng.permutation(num_classes)
    owners = {c: [] for c in range(num_classes)}
    for i in range(m):
        for j in range(k):
            owners[int(order[(i * k + j) % num_classes])].append(i)

    buckets = [[] for _ in range(m)]
    for c in range(num_classes):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if idx.size < len(owners[c]):
            raise InfeasibleScenarioError(
                f"class {c} has {idx.size} samples for {len(owners[c])} owning clients"
            )
        for owner, shard in zip(owners[c], np.array_split(idx, len(owners[c]))):
            buckets[owner].append(shard)
    return _finish(buckets)


def assign_practical(
    labels: np.ndarray,
    num_classes: int,
    spec: PartitionSpec,
    rng: np.random.Generator,
    floor: Optional[int] = None,
) -> List[np.ndarray]:
    """Per-class Dirichlet(alpha) proportions, largest-remainder rounding, bounded redraws.

    A draw is accepted once every client holds at least `floor` samples
    (default spec.client_floor(), the same floor build_scenario enforces).
    """
    m = spec.num_clients
    floor = spec.client_floor() if floor is None else floor
    smallest = 0
    for attempt in range(1, DIRICHLET_MAX_RETRIES + 1):
        buckets = [[] for _ in range(m)]
        for c in range(num_classes):
            idx = rng.permutation(np.flatnonzero(labels == c))
            counts = _largest_remainder(_dirichlet(rng, spec.alpha, m), idx.size)
            for i, part in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
                buckets[i].append(part)
        assignment = _finish(buckets)
        smallest = min(a.size for a in assignment)
        if smallest >= floor:
            if attempt > 1:
                logger.debug(f"Dirichlet draw accepted after {attempt} attempts")
            return assignment
        logger.debug(f"Dirichlet attempt {attempt}: smallest client has {smallest} samples")

    raise InfeasibleScenarioError(
        f"client floor of {floor} samples not met after "
        f"{DIRICHLET_MAX_RETRIES} Dirichlet draws (smallest client held {smallest} samples)"
    )


def label_entropy(histogram: np.ndarray) -> float:
    """Shannon entropy (nats) of a class histogram"""
    counts = np.asarray(histogram, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log(p)))


def mean_label_entropy(labels: np.ndarray, assignment: Sequence[np.ndarray], num_classes: int) -> float:
    """Mean per-client label entropy over non-empty clients"""
    values = [
        label_entropy(np.bincount(labels[idx], minlength=num_classes))
        for idx in assignment
        if idx.size
    ]
    return float(np.mean(values)) if values else 0.0


# =============================================================================
# 🔀 FEATURE SHIFT
# =============================================================================


def client_transform(dim: int, shift_strength: float, seed: int, client_id: int) -> Tuple[Matrix, np.ndarray]:
    """Rotation R_i (planar rotations on coordinate pairs) and offset t_i for one client"""
    rng = derive_rng(seed, SHIFT_STREAM, client_id)
    rotation = np.eye(dim)
    for p in range(0, dim - 1, 2):
        theta = shift_strength * (math.pi / 4.0) * rng.uniform(-1.0, 1.0)
        c, s = math.cos(theta), math.sin(theta)
        rotation[p, p], rotation[p, p + 1] = c, -s
        rotation[p + 1, p], rotation[p + 1, p + 1] = s, c

    offset = np.zeros(dim)
    magnitude = shift_strength * (1.0 + 0.5 * rng.uniform())
    sign = 1.0 if (client_id // dim) % 2 == 0 else -1.0
    offset[client_id % dim] = sign * magnitude
    return rotation, offset


# =============================================================================
# 🧩 SCENARIO ASSEMBLY
# =============================================================================


def train_count(n: int, train_fraction: float) -> int:
    """Training share of n samples, rounded half up"""
    return int(math.floor(train_fraction * n + 0.5))


def smallest_splittable(train_fraction: float) -> int:
    """Smallest n whose split leaves at least one sample on each side"""
    if not 0.0 < train_fraction < 1.0:
        raise InfeasibleScenarioError(f"train_fraction={train_fraction} leaves one side empty")
    n = 2
    while not 1 <= train_count(n, train_fraction) <= n - 1:
        n += 1
    return n


def split_train_test(
    data: Dataset,
    train_fraction: float,
    seed: Union[int, Sequence[int]],
) -> Tuple[Dataset, Dataset]:
    """Stratified, seeded split of one client's samples"""
    n = data.size
    if not 0.0 < train_fraction < 1.0:
        raise InfeasibleScenarioError(f"train_fraction={train_fraction} leaves one side empty")
    n_train = train_count(n, train_fraction)
    n_test = n - n_train
    if n_train < 1 or n_test < 1:
        raise InfeasibleScenarioError(
            f"{n} samples at train_fraction={train_fraction} gives {n_train}/{n_test} split"
        )

    rng = np.random.default_rng(seed)
    counts = data.class_histogram()
    quotas = _largest_remainder(counts / n, n_test)

    test_parts = []
    for c in np.flatnonzero(counts):
        idx = rng.permutation(np.flatnonzero(data.labels == c))
        test_parts.append(idx[:quotas[c]])
    test_idx = np.sort(np.concatenate(test_parts))
    train_mask = np.ones(n, dtype=bool)
    train_mask[test_idx] = False
    return data.subset(np.flatnonzero(train_mask)), data.subset(test_idx)


def build_scenario(
    ds: Dataset,
    spec: PartitionSpec,
    assignment: Sequence[np.ndarray],
    name: Optional[str] = None,
    source: str = "synthetic",
) -> Scenario:
    """Turn a client → source-index assignment into per-client train/test sets"""
    floor = spec.client_floor()
    clients = []
    for i, idx in enumerate(assignment):
        if idx.size < floor:
            raise InfeasibleScenarioError(
                f"client {i} holds {idx.size} samples, needs at least {floor}"
            )
        inputs = ds.inputs[idx]
        if spec.kind == "feature_shift" and spec.shift_strength > 0:
            rotation, offset = client_transform(ds.dim, spec.shift_strength, spec.seed, i)
            inputs = inputs @ rotation.T + offset
        # stored precision is float32; quantise now so memory and disk agree
        inputs = inputs.astype(np.float32).astype(np.float64)
        local = Dataset(inputs, ds.labels[idx], ds.num_classes)
        train, test = split_train_test(local, spec.train_fraction, [spec.seed, stream_key(SPLIT_STREAM), i])
        clients.append(ClientData(i, train, test, source_indices=np.asarray(idx)))

    return Scenario(
        spec=spec,
        clients=clients,
        num_classes=ds.num_classes,
        input_dim=ds.dim,
        name=name or f"{source}-{spec.kind}",
        source=source,
    )


def partition_iid(ds: Dataset, spec: PartitionSpec, name: Optional[str] = None, source: str = "synthetic") -> Scenario:
    rng = np.random.default_rng(spec.seed)
    assignment = assign_iid(ds.labels, ds.num_classes, spec.num_clients, rng)
    return build_scenario(ds, spec, assignment, name, source)


def partition_pathological(ds: Dataset, spec: PartitionSpec, name: Optional[str] = None, source: str = "synthetic") -> Scenario:
    if spec.kind != "pathological":
        raise InfeasibleScenarioError(f"partition_pathological called with kind={spec.kind}")
    rng = np.random.default_rng(spec.seed)
    assignment = assign_pathological(ds.labels, ds.num_classes, spec, rng)
    return build_scenario(ds, spec, assignment, name, source)


def partition_practical(ds: Dataset, spec: PartitionSpec, name: Optional[str] = None, source: str = "synthetic") -> Scenario:
    if spec.kind != "practical":
        raise InfeasibleScenarioError(f"partition_practical called with kind={spec.kind}")
    rng = np.random.default_rng(spec.seed)
    assignment = assign_practical(ds.labels, ds.num_classes, spec, rng)
    return build_scenario(ds, spec, assignment, name, source)


def partition_feature_shift(ds: Dataset, spec: PartitionSpec, name: Optional[str] = None, source: str = "synthetic") -> Scenario:
    if spec.kind != "feature_shift":
        raise InfeasibleScenarioError(f"partition_feature_shift called with kind={spec.kind}")
    rng = np.random.default_rng(spec.seed)
    assignment = assign_iid(ds.labels, ds.num_classes, spec.num_clients, rng)
    return build_scenario(ds, spec, assignment, name, source)


PARTITIONERS = {
    "iid": partition_iid,
    "pathological": partition_pathological,
    "practical": partition_practical,
    "feature_shift": partition_feature_shift,
}


def partition(ds: Dataset, spec: PartitionSpec, name: Optional[str] = None, source: str = "synthetic") -> Scenario:
    """Dispatch on spec.kind"""
    logger.info(f"Partitioning {ds.size} samples into {spec.num_clients} clients ({spec.kind})")
    return PARTITIONERS[spec.kind](ds, spec, name=name, source=source)


# =============================================================================
# 💾 PFLS FORMAT
# =============================================================================


def encode_dataset(ds: Dataset) -> bytes:
    header = HEADER.pack(FORMAT_MAGIC, FORMAT_VERSION, ds.size, ds.dim, ds.num_classes)
    inputs = np.ascontiguousarray(ds.inputs, dtype="<f4").tobytes()
    labels = np.ascontiguousarray(ds.labels, dtype="<u4").tobytes()
    return header + inputs + labels


def decode_dataset(blob: bytes, origin: str = "<bytes>") -> Dataset:
    if len(blob) < HEADER.size:
        raise ScenarioFormatError(f"{origin}: truncated header")
    magic, version, n, d, num_classes = HEADER.unpack_from(blob, 0)
    if magic != FORMAT_MAGIC:
        raise ScenarioFormatError(f"{origin}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ScenarioFormatError(f"{origin}: unsupported version {version}")
    expected = HEADER.size + 4 * n * d + 4 * n
    if len(blob) != expected:
        raise ScenarioFormatError(f"{origin}: expected {expected} bytes, found {len(blob)}")
    inputs = np.frombuffer(blob, dtype="<f4", count=n * d, offset=HEADER.size)
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=HEADER.size + 4 * n * d)
    try:
        return Dataset(inputs.reshape(n, d).astype(np.float64), labels.astype(np.int64), num_classes)
    except DatasetError as e:
        raise ScenarioFormatError(f"{origin}: {e}") from e


def client_file(directory: Path, client_id: int, side: str) -> Path:
    return directory / f"client_{client_id:04d}_{side}.pfls"


def manifest_bytes(scenario: Scenario) -> bytes:
    return (json.dumps(scenario.manifest(), indent=2, sort_keys=True) + "\n").encode("utf-8")


def save_scenario(scenario: Scenario, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for client in scenario.clients:
        client_file(directory, client.client_id, "train").write_bytes(encode_dataset(client.train))
        client_file(directory, client.client_id, "test").write_bytes(encode_dataset(client.test))
    path = directory / MANIFEST_NAME
    path.write_bytes(manifest_bytes(scenario))
    logger.info(f"Scenario '{scenario.name}' written to {directory}")
    return path


def load_scenario(directory: Union[str, Path]) -> Scenario:
    directory = Path(directory)
    path = directory / MANIFEST_NAME
    if not path.is_file():
        raise ScenarioFormatError(f"{directory}: no {MANIFEST_NAME}")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
        spec = PartitionSpec(**manifest["spec"])
        num_classes = int(manifest["num_classes"])
        input_dim = int(manifest["input_dim"])
        entries = manifest["per_client"]
    except (ValueError, KeyError, TypeError, ValidationError) as e:
        raise ScenarioFormatError(f"{path}: invalid manifest ({e})") from e
    if manifest.get("format") != FORMAT_MAGIC.decode("ascii") or manifest.get("version") != FORMAT_VERSION:
        raise ScenarioFormatError(f"{path}: unsupported format/version")

    clients = []
    for position, entry in enumerate(entries):
        try:
            cid = int(entry["client"])
            expected = (int(entry["n_train"]), int(entry["n_test"]), list(entry["class_hist"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioFormatError(f"{path}: bad per_client entry {position} ({e})") from e
        sides = {}
        for side in ("train", "test"):
            file = client_file(directory, cid, side)
            if not file.is_file():
                raise ScenarioFormatError(f"{file}: missing")
            sides[side] = decode_dataset(file.read_bytes(), str(file))
        train, test = sides["train"], sides["test"]
        client = ClientData(cid, train, test)
        if (train.size, test.size) != expected[:2]:
            raise ScenarioFormatError(f"client {cid}: sample counts disagree with manifest")
        if train.num_classes != num_classes or test.num_classes != num_classes:
            raise ScenarioFormatError(f"client {cid}: num_classes disagrees with manifest")
        if train.dim != input_dim or test.dim != input_dim:
            raise ScenarioFormatError(f"client {cid}: input_dim disagrees with manifest")
        if client.class_histogram().tolist() != expected[2]:
            raise ScenarioFormatError(f"client {cid}: class histogram disagrees with manifest")
        clients.append(client)

    return Scenario(
        spec=spec,
        clients=clients,
        num_classes=num_classes,
        input_dim=input_dim,
        name=str(manifest.get("name", directory.name)),
        source=str(manifest.get("source", "unknown")),
        version=int(manifest["version"]),
    )


def scenario_fingerprint(directory: Union[str, Path]) -> str:
    """SHA-256 of the manifest bytes"""
    path = Path(directory) / MANIFEST_NAME
    if not path.is_file():
        raise ScenarioFormatError(f"{directory}: no {MANIFEST_NAME}")
    return hashlib.sha256(path.read_bytes()).hexdigest()
