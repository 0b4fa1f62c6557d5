#!/usr/bin/env python3
"""
🧪 PFL Simulator - Personalized Federated Learning Benchmark
============================================================
Deterministic desk-scale federated learning: generate a heterogeneous
scenario, run any of the 16 bundled algorithms on it, and compare results.

    python main.py generate --kind practical --alpha 0.1 --clients 20 --out dataset/synth
    python main.py run --data dataset/synth --algo FedALA --rounds 200 --out results/fedala
    python main.py report results/fedavg results/fedala

Version: 1.0.0
License: MIT
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from modules.algorithms import available_algorithms
from modules.datagen import (
    PartitionSpec,
    load_idx,
    load_scenario,
    mean_label_entropy,
    partition,
    save_scenario,
    synth_gaussian,
)
from modules.errors import ConfigError, ContractViolation, InfeasibleScenarioError, PflError
from modules.experiment import build_experiment_config, load_config_file, run_experiment
from modules.report import build_report
from modules.settings import get_settings

# =============================================================================
# 🔧 CONFIGURATION
# =============================================================================

APP_NAME = "PFL Simulator"
APP_VERSION = "1.0.0"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGED = 4

console = Console()
logger = logging.getLogger("pflsim")

# =============================================================================
# 📝 LOGGING
# =============================================================================


def setup_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(name)s | %(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


# =============================================================================
# 🗂️ COMMANDS
# =============================================================================


def cmd_generate(args: argparse.Namespace) -> Dict[str, Any]:
    """Build a scenario, write it to disk and print its class histograms"""
    try:
        spec = PartitionSpec(
            kind=args.kind,
            num_clients=args.clients,
            classes_per_client=args.classes_per_client,
            alpha=args.alpha,
            shift_strength=args.shift_strength,
            seed=args.seed,
            train_fraction=args.train_fraction,
            min_samples_per_client=args.min_samples,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e

    if args.dataset == "mnist":
        if not args.images or not args.labels:
            raise ConfigError("--dataset mnist needs --images and --labels")
        source = load_idx(args.images, args.labels)
    else:
        source = synth_gaussian(
            num_classes=args.classes,
            dim=args.dim,
            per_class=args.per_class,
            spread=args.spread,
            seed=args.seed,
            separation=args.separation,
        )

    name = args.name or Path(args.out).name
    scenario = partition(source, spec, name=name, source=args.dataset)
    save_scenario(scenario, args.out)
    loaded = load_scenario(args.out)

    entropy = mean_label_entropy(
        source.labels,
        [c.source_indices for c in scenario.clients],
        scenario.num_classes,
    )
    table = Table(title=f"Scenario '{name}' ({spec.kind}, {loaded.num_clients} clients)")
    table.add_column("Client", justify="right", style="cyan")
    table.add_column("Train", justify="right")
    table.add_column("Test", justify="right")
    table.add_column("Class histogram")
    for client in loaded.clients:
        table.add_row(
            str(client.client_id),
            str(client.n_train),
            str(client.n_test),
            " ".join(str(int(v)) for v in client.class_histogram()),
        )
    console.print(table)
    console.print(f"Mean per-client label entropy: {entropy:.4f} nats")

    manifest = loaded.manifest()
    return {"name": name, "num_clients": loaded.num_clients, "total_samples": manifest["total_samples"], "entropy": entropy}


def _parse_hyperparams(pairs: Optional[List[str]]) -> Optional[Dict[str, float]]:
    if not pairs:
        return None
    parsed: Dict[str, float] = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise ConfigError(f"--hp expects name=value, got '{pair}'")
        try:
            parsed[key.strip()] = float(value)
        except ValueError:
            raise ConfigError(f"--hp {key}: '{value}' is not a number") from None
    return parsed


def cmd_run(args: argparse.Namespace) -> Dict[str, Any]:
    """Run the configured experiment; flags override the config file"""
    file_data = load_config_file(args.config) if args.config else None
    overrides = {
        "scenario": args.data,
        "output": args.out,
        "model": args.model,
        "hidden_dim": args.hidden_dim,
        "input_dim": args.input_dim,
        "repetitions": args.repetitions,
        "workers": args.workers,
        "dp_attack": args.dp_attack,
        "run": {
            "algorithm": args.algo,
            "num_rounds": args.rounds,
            "num_clients": args.clients,
            "join_ratio": args.join_ratio,
            "local_epochs": args.local_epochs,
            "batch_size": args.batch_size,
            "learning_rate": args.lr,
            "eval_interval": args.eval_interval,
            "seed": args.seed,
            "hyperparams": _parse_hyperparams(args.hp),
        },
        "dp": {
            "enabled": args.dp,
            "sigma": args.dp_sigma,
            "clip_norm": args.dp_clip,
        },
    }
    if file_data is None or "workers" not in file_data:
        overrides["workers"] = args.workers or get_settings().workers
    if (file_data is None or "output" not in file_data) and args.out is None:
        overrides["output"] = str(get_settings().results_dir)

    cfg = build_experiment_config(file_data, overrides)
    if not cfg.dp.enabled and (args.dp_sigma is not None or args.dp_clip is not None):
        logger.warning("--dp-sigma/--dp-clip have no effect without --dp")
    summary = run_experiment(cfg)

    console.print(
        f"✅ {summary['algo']} on '{summary['scenario']}': personalized "
        f"{summary['final_acc_mean'] * 100:.2f}±{summary['final_acc_std'] * 100:.2f}, global "
        f"{summary['final_global_mean'] * 100:.2f}±{summary['final_global_std'] * 100:.2f}"
    )
    return summary


def cmd_report(args: argparse.Namespace) -> Any:
    """Merge summaries into one comparison table"""
    report = build_report(args.dirs)
    console.print(report.to_table())
    return report


# =============================================================================
# 🧭 ARGUMENT PARSING
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pflsim", description=f"{APP_NAME} {APP_VERSION}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="create a heterogeneous client scenario")
    gen.add_argument("--dataset", choices=["synthetic", "mnist"], default="synthetic")
    gen.add_argument("--images", help="IDX image file (mnist)")
    gen.add_argument("--labels", help="IDX label file (mnist)")
    gen.add_argument("--classes", type=int, default=10)
    gen.add_argument("--dim", type=int, default=16)
    gen.add_argument("--per-class", type=int, default=200)
    gen.add_argument("--spread", type=float, default=1.0)
    gen.add_argument("--separation", type=float, default=6.0)
    gen.add_argument("--kind", choices=["pathological", "practical", "feature_shift", "iid"], default="practical")
    gen.add_argument("--clients", type=int, default=20)
    gen.add_argument("--classes-per-client", type=int, default=2)
    gen.add_argument("--alpha", type=float, default=0.1)
    gen.add_argument("--shift-strength", type=float, default=1.0)
    gen.add_argument("--train-fraction", type=float, default=0.75)
    gen.add_argument("--min-samples", type=int, default=10)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--name", help="scenario name (defaults to the output directory name)")
    gen.add_argument("--out", required=True, help="output directory")
    gen.set_defaults(handler=cmd_generate)

    run = sub.add_parser("run", help="train an algorithm on a scenario")
    run.add_argument("--config", help="JSON experiment config; flags override it")
    run.add_argument("--data", "--scenario", dest="data", help="scenario directory")
    run.add_argument("--model", choices=["mlp"], default=None)
    run.add_argument("--algo", help=f"one of: {', '.join(available_algorithms())}")
    run.add_argument("--rounds", type=int)
    run.add_argument("--clients", type=int, help="must match the scenario when given")
    run.add_argument("--join-ratio", type=float)
    run.add_argument("--local-epochs", type=int)
    run.add_argument("--batch-size", type=int)
    run.add_argument("--lr", type=float)
    run.add_argument("--eval-interval", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--hp", action="append", metavar="NAME=VALUE", help="algorithm hyperparameter (repeatable)")
    run.add_argument("--hidden-dim", type=int)
    run.add_argument("--input-dim", type=int, help="expected input dimension of the scenario")
    run.add_argument("--repetitions", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--dp", action=argparse.BooleanOptionalAction, help="clip and noise client uploads")
    run.add_argument("--dp-sigma", type=float)
    run.add_argument("--dp-clip", type=float)
    run.add_argument("--dp-attack", action=argparse.BooleanOptionalAction, help="run the gradient inversion attack after training")
    run.add_argument("--out", help="output directory")
    run.set_defaults(handler=cmd_run)

    rep = sub.add_parser("report", help="compare experiment summaries")
    rep.add_argument("dirs", nargs="+", help="experiment output directories")
    rep.set_defaults(handler=cmd_report)
    return parser


# =============================================================================
# 🚀 MAIN ENTRY POINT
# =============================================================================


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or get_settings().log_level)

    try:
        args.handler(args)
    except InfeasibleScenarioError as e:
        logger.error(f"Infeasible scenario: {e}")
        return EXIT_INFEASIBLE
    except ContractViolation as e:
        logger.error(f"Run aborted: {e}")
        return EXIT_DIVERGED
    except PflError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
