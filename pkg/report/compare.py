"""Cross-run comparison of daily metrics."""

from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import duckdb as ddb
import polars as pl

from errors import ReportError
from logger.logger import get_logger

DAILY_METRICS_FILE = "daily_metrics.csv"


class Comparison(NamedTuple):
    daily: pl.DataFrame
    summary: pl.DataFrame


def _labels(run_dirs: Sequence[Path]) -> list[str]:
    labels: list[str] = []
    for run_dir in run_dirs:
        base = run_dir.name or str(run_dir)
        label, n = base, 1
        while label in labels:
            n += 1
            label = f"{base}_{n}"
        labels.append(label)
    return labels


def _quote(identifier: str) -> str:
    return '"' + identifier.replace('"', '""') + '"'


def _literal(value: str) -> str:
    return "'" + value.replace("'", "''") + "'"


class RunComparer:
    """
    Responsible for aligning the daily metrics of finished runs.

    Single Responsibility: read each run's daily metrics, join them by day
    in DuckDB and derive the power reduction against a baseline run.
    """

    def __init__(self) -> None:
        self.logger = get_logger(__name__)
        self.db_connection = ddb.connect()

    def read_run(self, run_dir: Union[str, Path]) -> pl.DataFrame:
        path = Path(run_dir) / DAILY_METRICS_FILE
        if not path.exists():
            self.logger.error(f"No daily metrics in {run_dir}")
            raise ReportError(f"{path} not found; is {run_dir} a finished run?")
        return pl.read_csv(path)

    def compare(
        self,
        run_dirs: Sequence[Union[str, Path]],
        baseline: Optional[Union[str, Path]] = None,
    ) -> Comparison:
        """
        Args:
            run_dirs: finished run directories, compared in this order
            baseline: run directory the reduction is measured against;
                defaults to the first run

        Raises:
            ReportError: no runs, missing metrics or differing day counts
        """
        if not run_dirs:
            raise ReportError("report needs at least one run directory")
        dirs = [Path(d) for d in run_dirs]
        if baseline is not None and Path(baseline) not in dirs:
            dirs.append(Path(baseline))
        labels = _labels(dirs)
        base_label = labels[dirs.index(Path(baseline))] if baseline else labels[0]

        frames = [self.read_run(d) for d in dirs]
        heights = {label: f.height for label, f in zip(labels, frames)}
        if len(set(heights.values())) != 1:
            self.logger.error(f"Runs cover different day counts: {heights}")
            raise ReportError(f"runs cover different numbers of days: {heights}")

        names = [f"run_{i}" for i in range(len(frames))]
        try:
            for name, frame in zip(names, frames):
                self.db_connection.register(name, frame)
            return Comparison(
                self._daily(names, labels), self._summary(names, labels, base_label)
            )
        finally:
            for name in names:
                self.db_connection.unregister(name)

    def _daily(self, names: list[str], labels: list[str]) -> pl.DataFrame:
        columns = ", ".join(
            f"{name}.tvr AS {_quote(label + '_tvr')}, "
            f"{name}.avg_power_w AS {_quote(label + '_power_w')}"
            for name, label in zip(names, labels)
        )
        joins = " ".join(f"JOIN {name} USING (day)" for name in names[1:])
        return self.db_connection.execute(
            f"SELECT day, {columns} FROM {names[0]} {joins} ORDER BY day"
        ).pl()

    def _summary(
        self, names: list[str], labels: list[str], base_label: str
    ) -> pl.DataFrame:
        union = " UNION ALL ".join(
            f"SELECT {_literal(label)} AS run, {i} AS position, "
            f"day, tvr, avg_power_w FROM {name}"
            for i, (name, label) in enumerate(zip(names, labels))
        )
        return self.db_connection.execute(
            f"""
            WITH daily AS ({union}),
            per_run AS (
                SELECT run, position,
                       COUNT(*) AS days,
                       AVG(tvr) AS mean_tvr,
                       AVG(avg_power_w) AS mean_power_w,
                       SUM(avg_power_w) * 24 / 1000 AS energy_kwh
                FROM daily
                GROUP BY run, position
            )
            SELECT p.run, p.days, p.mean_tvr, p.mean_power_w, p.energy_kwh,
                   100 * (b.mean_power_w - p.mean_power_w) / b.mean_power_w
                       AS power_reduction_pct
            FROM per_run p
            CROSS JOIN (
                SELECT mean_power_w FROM per_run
                WHERE run = {_literal(base_label)}
            ) b
            ORDER BY p.position
            """
        ).pl()


def write_comparison(comparison: Comparison, out_dir: Union[str, Path]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    comparison.daily.write_csv(out_dir / "comparison_daily.csv")
    comparison.summary.write_csv(out_dir / "comparison_summary.csv")
