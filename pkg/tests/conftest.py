import struct

import numpy as np
import pytest

from modules.datagen import PartitionSpec, partition, synth_gaussian
from modules.engine import RunConfig
from modules.numcore import ParamVector


@pytest.fixture
def scalar():
    """One-parameter ParamVector factory"""
    def make(value, name="v", group="body"):
        return ParamVector.from_arrays([(name, np.array([float(value)]), group)])
    return make


@pytest.fixture
def quadratic():
    """Objective factory for L(v) = (v − target)²/2; batches are ignored"""
    def make(target):
        def objective(params, batch):
            v = params.data[0]
            return 0.5 * (v - target) ** 2, params.with_data([v - target])
        return objective
    return make


@pytest.fixture
def blobs():
    return synth_gaussian(num_classes=4, dim=3, per_class=40, spread=0.5, seed=3)


@pytest.fixture
def make_scenario():
    def make(kind="pathological", num_clients=4, num_classes=4, dim=3, per_class=40, data_seed=0, **spec_fields):
        ds = synth_gaussian(num_classes=num_classes, dim=dim, per_class=per_class, spread=0.5, seed=data_seed)
        spec = PartitionSpec(kind=kind, num_clients=num_clients, **spec_fields)
        return partition(ds, spec, name=f"test-{kind}")
    return make


@pytest.fixture
def run_config():
    def make(**fields):
        base = dict(num_rounds=3, local_epochs=1, batch_size=8, learning_rate=0.05, seed=7)
        base.update(fields)
        return RunConfig(**base)
    return make


@pytest.fixture
def write_idx(tmp_path):
    """Write IDX image/label files; returns their paths"""
    def make(images, labels, image_magic=0x00000803, label_magic=0x00000801, truncate=0, name="data"):
        images = np.asarray(images, dtype=np.uint8)
        count, rows, cols = images.shape
        img = struct.pack(">IIII", image_magic, count, rows, cols) + images.tobytes()
        lab = struct.pack(">II", label_magic, len(labels)) + np.asarray(labels, dtype=np.uint8).tobytes()
        if truncate:
            img = img[:-truncate]
        img_path = tmp_path / f"{name}-images-idx3-ubyte"
        lab_path = tmp_path / f"{name}-labels-idx1-ubyte"
        img_path.write_bytes(img)
        lab_path.write_bytes(lab)
        return img_path, lab_path
    return make
