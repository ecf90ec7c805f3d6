
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from ..config import Config
from ..errors import DatasetError
from .metrics import read_metrics

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("method", "tasks_seen", "avg_accuracy", "n_seeds")


class SummaryStats:
    @staticmethod
    def run_averages(metrics: pd.DataFrame) -> pd.DataFrame:
        """
        Per run and trained-through task: mean accuracy over the evaluated tasks.
        """
        return (metrics.groupby(["run_id", "method", "seed", "trained_through"], sort=True)["accuracy"]
                .mean()
                .reset_index(name="avg_accuracy"))

    @staticmethod
    def average_accuracy(metrics: pd.DataFrame) -> pd.DataFrame:
        """
        avg-accuracy(method, t) = mean over runs of mean over tau <= t of accuracy(t, tau).
        """
        per_run = SummaryStats.run_averages(metrics)
        summary = (per_run.groupby(["method", "trained_through"], sort=True)["avg_accuracy"]
                   .agg(["mean", "count"])
                   .reset_index())
        summary.columns = list(SUMMARY_COLUMNS)
        return summary

    @staticmethod
    def forgetting(metrics: pd.DataFrame) -> pd.DataFrame:
        """
        Per method: mean drop from just-learned accuracy to final accuracy over earlier tasks.
        """
        rows = []
        for (method, run_id), run in metrics.groupby(["method", "run_id"], sort=True):
            final_t = run["trained_through"].max()
            learned = run[run["trained_through"] == run["eval_task"]].set_index("eval_task")["accuracy"]
            final = run[run["trained_through"] == final_t].set_index("eval_task")["accuracy"]
            earlier = [tau for tau in final.index if tau < final_t]
            drop = float(np.mean([learned[tau] - final[tau] for tau in earlier])) if earlier else 0.0
            rows.append((method, run_id, drop))
        per_run = pd.DataFrame(rows, columns=["method", "run_id", "forgetting"])
        return per_run.groupby("method", sort=True)["forgetting"].mean().reset_index()

    @staticmethod
    def as_table(summary: pd.DataFrame) -> pd.DataFrame:
        return summary.pivot(index="method", columns="tasks_seen", values="avg_accuracy")


def summarize(metrics_path, output_path: Optional[str] = None) -> pd.DataFrame:
    metrics = read_metrics(metrics_path)
    summary = SummaryStats.average_accuracy(metrics)
    if summary.empty:
        raise DatasetError(f"No records to summarise in {metrics_path}")
    output_path = Path(output_path) if output_path else Path(metrics_path).with_name(Config.SUMMARY_FILE)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    summary.to_csv(output_path, index=False, float_format="%.6f")

    table = SummaryStats.as_table(summary)
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    forgetting = SummaryStats.forgetting(metrics)
    print(forgetting.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    for method, drop in zip(forgetting["method"], forgetting["forgetting"]):
        logger.info(f"{method}: mean forgetting {drop:.4f}")
    logger.info(f"Summary of {metrics_path} written to {output_path}")
    return summary


def read_summary(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"Summary file not found: {path}")
    summary = pd.read_csv(path, dtype={"method": str})
    missing = [c for c in SUMMARY_COLUMNS if c not in summary.columns]
    if missing:
        raise DatasetError(f"Summary file {path} lacks columns {missing}")
    return summary
