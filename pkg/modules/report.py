#!/usr/bin/env python3
"""
📊 Comparison Report
====================
Merges experiment summaries into one algorithms × scenarios table of final
personalized accuracy, "mean±std" in percent.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union
import logging

from rich.table import Table

from .errors import ReportError

logger = logging.getLogger(__name__)

SUMMARY_NAME = "summary.json"
REQUIRED_FIELDS = ("algo", "scenario", "fingerprint", "final_acc_mean", "final_acc_std")


def format_cell(mean: float, std: float) -> str:
    return f"{mean * 100:.2f}±{std * 100:.2f}"


@dataclass
class Report:
    algorithms: List[str] = field(default_factory=list)
    scenarios: List[str] = field(default_factory=list)
    cells: Dict[Tuple[str, str], str] = field(default_factory=dict)

    def rows(self) -> List[List[str]]:
        return [
            [algo] + [self.cells.get((algo, scen), "-") for scen in self.scenarios]
            for algo in self.algorithms
        ]

    def to_table(self) -> Table:
        table = Table(title="Test accuracy (%)")
        table.add_column("Algorithm", style="cyan")
        for scen in self.scenarios:
            table.add_column(scen, justify="right")
        for row in self.rows():
            table.add_row(*row)
        return table


def load_summary(directory: Union[str, Path]) -> Dict:
    path = Path(directory)
    if path.is_dir():
        path = path / SUMMARY_NAME
    if not path.is_file():
        raise ReportError(f"No summary found at {path}")
    try:
        summary = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise ReportError(f"{path}: invalid JSON ({e})") from e
    missing = [k for k in REQUIRED_FIELDS if k not in summary]
    if missing:
        raise ReportError(f"{path}: summary lacks {', '.join(missing)}")
    return summary


def merge_summaries(summaries: Sequence[Dict]) -> Report:
    if not summaries:
        raise ReportError("No summaries to report")
    report = Report()
    fingerprints: Dict[str, str] = {}
    names: Dict[str, str] = {}
    for summary in summaries:
        algo, scen, fp = summary["algo"], summary["scenario"], summary["fingerprint"]
        if fingerprints.setdefault(scen, fp) != fp:
            raise ReportError(f"Scenario '{scen}' appears with two different fingerprints")
        if names.setdefault(fp, scen) != scen:
            raise ReportError(f"One scenario is reported under two names: '{names[fp]}' and '{scen}'")
        if (algo, scen) in report.cells:
            raise ReportError(f"Two summaries for {algo} on '{scen}'")
        if algo not in report.algorithms:
            report.algorithms.append(algo)
        if scen not in report.scenarios:
            report.scenarios.append(scen)
        report.cells[(algo, scen)] = format_cell(summary["final_acc_mean"], summary["final_acc_std"])
    return report


def build_report(directories: Sequence[Union[str, Path]]) -> Report:
    return merge_summaries([load_summary(d) for d in directories])
