
import asyncio
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List

import numpy as np
import pandas as pd

from ..errors import ConfigError, DatasetError, DomainError

logger = logging.getLogger(__name__)

COLUMNS = ("run_id", "seed", "method", "trained_through", "eval_task", "accuracy", "wall_time_s")
HEADER = ",".join(COLUMNS)


@dataclass(frozen=True)
class MetricsRecord:
    run_id: str
    seed: int
    method: str
    trained_through: int
    eval_task: int
    accuracy: float
    wall_time_s: float

    def __post_init__(self):
        if not 1 <= self.eval_task <= self.trained_through:
            raise DomainError(f"eval_task {self.eval_task} must lie in [1, {self.trained_through}]")
        if not 0.0 <= self.accuracy <= 1.0:
            raise DomainError(f"accuracy {self.accuracy} outside [0, 1]")
        for text in (self.run_id, self.method):
            if "," in text or "\n" in text:
                raise ConfigError(f"'{text}' cannot appear in a metrics row")

    def to_line(self) -> str:
        return (f"{self.run_id},{self.seed},{self.method},{self.trained_through},{self.eval_task},"
                f"{self.accuracy:.6f},{self.wall_time_s:.3f}")


def records_for_row(run_id: str, seed: int, method: str, task_index: int,
                    row: np.ndarray, wall_time_s: float) -> List[MetricsRecord]:
    """MetricsRecords for one evaluated row; task numbers are 1-based."""
    return [MetricsRecord(run_id, seed, method, task_index + 1, tau + 1, float(acc), wall_time_s)
            for tau, acc in enumerate(row)]


class MetricsWriter:
    """
    Append-only CSV with a header row. Every record is one write + flush, so an
    interrupted run leaves only whole lines behind. A single lock serialises appends.
    """

    def __init__(self, path):
        self.path = Path(path)
        self.lock = asyncio.Lock()

    def _write(self, records: Iterable[MetricsRecord]) -> int:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        count = 0
        with open(self.path, "a", encoding="utf-8") as f:
            if f.tell() == 0:
                f.write(HEADER + "\n")
                f.flush()
            for record in records:
                f.write(record.to_line() + "\n")
                f.flush()
                count += 1
        return count

    async def append(self, records: Iterable[MetricsRecord]) -> int:
        async with self.lock:
            return self._write(list(records))

    def append_sync(self, records: Iterable[MetricsRecord]) -> int:
        return self._write(list(records))


def read_metrics(path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"Metrics file not found: {path}")
    try:
        df = pd.read_csv(path, dtype={"run_id": str, "method": str})
    except pd.errors.EmptyDataError:
        raise DatasetError(f"Metrics file {path} is empty") from None
    missing = [c for c in COLUMNS if c not in df.columns]
    if missing:
        raise DatasetError(f"Metrics file {path} lacks columns {missing}")
    if df.empty:
        raise DatasetError(f"Metrics file {path} has no records")
    return df
