from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from deepsurrogate.errors import UsageError
from deepsurrogate.utils.io import atomic_write_text, frame_to_csv
from deepsurrogate.utils.metrics import EvalReport

logger = logging.getLogger(__name__)

BENCH_COLUMNS = [
    "scenario", "method", "replicate", "rmspe", "coverage", "mean_length", "misclass_rate", "n_eval", "seconds",
]
_SUMMARY = [("rmspe", "RMSPE"), ("coverage", "Coverage"), ("mean_length", "Length")]


@dataclass(frozen=True)
class BenchResult:
    scenario: str
    method: str
    replicate: int
    report: EvalReport
    seconds: float = 0.0


class BenchTable:
    """Collects (scenario, method) evaluations and renders comparison tables.

    Rows keep the order in which scenarios and methods were declared, so the
    output does not depend on which worker finished first.
    """

    def __init__(self, scenarios: list[str], methods: list[str]) -> None:
        if not scenarios:
            raise UsageError("bench needs at least one scenario")
        if not methods:
            raise UsageError("bench needs at least one method")
        self.scenarios = list(scenarios)
        self.methods = list(methods)
        self.results: list[BenchResult] = []

    def on_result(self, result: BenchResult) -> None:
        """Record one finished run."""
        if result.scenario not in self.scenarios or result.method not in self.methods:
            raise UsageError(f"unexpected result for ({result.scenario}, {result.method})")
        self.results.append(result)
        logger.info(
            "%s / %s #%d: RMSPE %.4f, coverage %.3f (%.1fs)",
            result.scenario, result.method, result.replicate,
            result.report.rmspe, result.report.coverage, result.seconds,
        )

    def to_frame(self) -> pd.DataFrame:
        """Long table, one row per run."""
        rows = [
            {
                "scenario": r.scenario,
                "method": r.method,
                "replicate": r.replicate,
                "rmspe": r.report.rmspe,
                "coverage": r.report.coverage,
                "mean_length": r.report.mean_length,
                "misclass_rate": r.report.misclass_rate,
                "n_eval": r.report.n_eval,
                "seconds": round(r.seconds, 3),
            }
            for r in self.results
        ]
        frame = pd.DataFrame(rows, columns=BENCH_COLUMNS)
        frame["_s"] = frame["scenario"].map(self.scenarios.index)
        frame["_m"] = frame["method"].map(self.methods.index)
        return frame.sort_values(["_s", "_m", "replicate"], kind="stable").drop(columns=["_s", "_m"]).reset_index(drop=True)

    def summary(self) -> pd.DataFrame:
        """Replicate means per (scenario, method)."""
        frame = self.to_frame()
        return (
            frame.groupby(["scenario", "method"], sort=False)[[c for c, _ in _SUMMARY]]
            .mean()
            .reset_index()
        )

    def to_markdown(self) -> str:
        """One row per scenario, RMSPE/Coverage/Length per method; best RMSPE in bold."""
        summary = self.summary().set_index(["scenario", "method"])
        header = ["Scenario"] + [f"{m} {label}" for m in self.methods for _, label in _SUMMARY]
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for scen in self.scenarios:
            present = [m for m in self.methods if (scen, m) in summary.index]
            if not present:
                continue
            best = min(present, key=lambda m: summary.loc[(scen, m), "rmspe"])
            cells = [scen]
            for m in self.methods:
                for col, _ in _SUMMARY:
                    if m not in present:
                        cells.append("-")
                        continue
                    value = f"{summary.loc[(scen, m), col]:.4f}"
                    cells.append(f"**{value}**" if col == "rmspe" and m == best else value)
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        """Long table without wall-clock times, so reruns are byte-identical."""
        return frame_to_csv(self.to_frame().drop(columns=["seconds"]))

    def export(self, filepath: str | Path) -> Path:
        """Write the table; ``.md`` gives markdown, anything else CSV."""
        filepath = Path(filepath)
        content = self.to_markdown() if filepath.suffix.lower() == ".md" else self.to_csv()
        return atomic_write_text(filepath, content)

    def clear(self) -> None:
        self.results.clear()
