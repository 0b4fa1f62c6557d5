#!/usr/bin/env python3
"""
🧫 Experiment Runner
====================
Repeated seeded runs of one algorithm on one scenario: per-repetition metrics
CSVs, optional gradient-inversion reports and a summary JSON with mean±std of
the final accuracies.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union
import logging

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .algorithms import create_plugin
from .datagen import Scenario, load_scenario, scenario_fingerprint
from .engine import RoundMetrics, RunConfig, Simulation, metrics_csv
from .errors import ConfigError
from .privacy import DpConfig, attack_client

logger = logging.getLogger(__name__)

SUMMARY_NAME = "summary.json"


class ExperimentConfig(BaseModel):
    """Everything `run` needs; mirrors the JSON config file"""

    scenario: Path
    output: Path = Path("results")
    model: Literal["mlp"] = "mlp"
    hidden_dim: int = Field(32, ge=1)
    input_dim: Optional[int] = Field(None, ge=1)
    repetitions: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    dp_attack: bool = False
    run: RunConfig = Field(default_factory=RunConfig)
    dp: DpConfig = Field(default_factory=DpConfig)


# =============================================================================
# 📄 CONFIG FILES
# =============================================================================


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}") from None
    except ValueError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def merge_config(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursive merge; values in `overrides` win and None values are skipped"""
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict):
            nested = merged.get(key)
            merged[key] = merge_config(nested if isinstance(nested, dict) else {}, value)
        else:
            merged[key] = value
    return merged


def build_experiment_config(file_data: Optional[Dict[str, Any]], overrides: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig(**merge_config(file_data or {}, overrides))
    except ValidationError as e:
        raise ConfigError(str(e)) from e


# =============================================================================
# 💾 OUTPUT
# =============================================================================


def atomic_write(path: Union[str, Path], text: str) -> Path:
    """Write via a temporary sibling file and rename into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dump_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _stats(values: List[float]) -> Dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


# =============================================================================
# 🏃 RUNNING
# =============================================================================


def _attack(sim: Simulation, dp: DpConfig) -> List[Dict[str, Any]]:
    """Invert one training sample's head gradient for every client"""
    reports = []
    for client in sim.clients:
        reports.append(attack_client(
            client.local,
            client.train.inputs,
            client.train.labels,
            client.client_id,
            sim.server.round,
            dp,
            sim.server.stream("attack", client.client_id),
        ))
    return reports


def run_repetition(
    scenario: Scenario,
    cfg: ExperimentConfig,
    repetition: int,
) -> Dict[str, Any]:
    run_cfg = cfg.run.model_copy(update={"seed": cfg.run.seed + repetition})
    sim = Simulation(scenario, run_cfg, hidden_dim=cfg.hidden_dim, dp=cfg.dp, workers=cfg.workers)
    history = sim.run()
    evaluated: List[RoundMetrics] = sim.evaluated

    atomic_write(cfg.output / f"metrics_rep{repetition}.csv", metrics_csv(history))
    result: Dict[str, Any] = {
        "final_acc": evaluated[-1].personal_acc,
        "final_global": evaluated[-1].global_acc,
        "best_acc": max(m.personal_acc for m in evaluated),
        "plugin": sim.plugin,
    }
    if cfg.dp_attack:
        reports = _attack(sim, cfg.dp)
        atomic_write(cfg.output / f"attack_rep{repetition}.json", dump_json(reports))
        result["attack"] = reports
    logger.info(
        f"Repetition {repetition} (seed {run_cfg.seed}): personal={result['final_acc']:.4f} "
        f"global={result['final_global']:.4f}"
    )
    return result


def run_experiment(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Run every repetition sequentially and write summary.json"""
    scenario = load_scenario(cfg.scenario)
    if cfg.input_dim is not None and cfg.input_dim != scenario.input_dim:
        raise ConfigError(f"input_dim={cfg.input_dim} but the scenario has input_dim={scenario.input_dim}")
    create_plugin(cfg.run.algorithm, cfg.run.hyperparams)
    cfg.run.bind(scenario.num_clients)

    logger.info(
        f"Experiment {cfg.run.algorithm} on '{scenario.name}': {cfg.repetitions} repetition(s), "
        f"{cfg.workers} worker(s)"
    )
    results = [run_repetition(scenario, cfg, r) for r in range(cfg.repetitions)]

    plugin = results[0]["plugin"]
    finals = [r["final_acc"] for r in results]
    globals_ = [r["final_global"] for r in results]
    personal = _stats(finals)
    shared = _stats(globals_)
    summary: Dict[str, Any] = {
        "algo": plugin.name,
        "category": plugin.category,
        "hyperparams": plugin.hp,
        "scenario": scenario.name,
        "fingerprint": scenario_fingerprint(cfg.scenario),
        "reps": cfg.repetitions,
        "seeds": [cfg.run.seed + r for r in range(cfg.repetitions)],
        "final_acc": finals,
        "final_acc_mean": personal["mean"],
        "final_acc_std": personal["std"],
        "final_global": globals_,
        "final_global_mean": shared["mean"],
        "final_global_std": shared["std"],
        "best_acc_mean": float(np.mean([r["best_acc"] for r in results])),
        "run": cfg.run.model_dump(mode="json", exclude={"seed"}),
        "dp": cfg.dp.model_dump(mode="json"),
    }
    if cfg.dp_attack:
        reports = [a for r in results for a in r["attack"]]
        finite = [a["psnr_db"] for a in reports if a["psnr_db"] is not None]
        summary["psnr"] = {
            "attacks": len(reports),
            "exact": sum(1 for a in reports if a["exact"]),
            "mean_db": float(np.mean(finite)) if finite else None,
            "std_db": float(np.std(finite)) if finite else None,
            "label_accuracy": float(np.mean([a["label_correct"] for a in reports])) if reports else None,
            "target": "representation",
        }

    path = atomic_write(cfg.output / SUMMARY_NAME, dump_json(summary))
    logger.info(f"Summary written to {path}")
    return summary
