
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Mapping

import numpy as np

from ..autograd import ops
from ..bayes.network import ParamKey, VariationalParams, forward_mean
from ..bayes.serialization import KIND_FISHER, read_container, write_container
from ..errors import AlignmentError, DatasetError, FormatError
from ..utils.seeding import rng_for

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FisherDiag:
    task_index: int
    sample_count: int
    values: Mapping[ParamKey, np.ndarray]

    @classmethod
    def from_arrays(cls, task_index: int, sample_count: int,
                    values: Dict[ParamKey, np.ndarray]) -> "FisherDiag":
        frozen = {}
        for key, value in values.items():
            arr = np.array(value, dtype=np.float64, copy=True)
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise AlignmentError(f"Fisher entries for {key} must be finite and nonnegative")
            arr.setflags(write=False)
            frozen[key] = arr
        return cls(task_index, sample_count, MappingProxyType(frozen))

    def __reduce__(self):
        return (FisherDiag.from_arrays, (self.task_index, self.sample_count, dict(self.values)))

    def check_aligned(self, params: VariationalParams):
        keys = [key for key, _, _ in params.entries()]
        if keys != list(self.values.keys()):
            raise AlignmentError(f"Fisher keys {list(self.values.keys())} do not match parameters {keys}")
        for key, mu, _ in params.entries():
            if self.values[key].shape != mu.shape:
                raise AlignmentError(f"Fisher {key}: shape {self.values[key].shape} != parameter shape {mu.shape}")

    def accumulate(self, other: "FisherDiag") -> "FisherDiag":
        """Entrywise sum, for the online (summed over tasks) penalty."""
        if list(self.values) != list(other.values):
            raise AlignmentError("Cannot accumulate Fisher estimates with different keys")
        summed = {key: self.values[key] + other.values[key] for key in self.values}
        return FisherDiag.from_arrays(other.task_index, self.sample_count + other.sample_count, summed)

    def total(self) -> float:
        return float(sum(v.sum() for v in self.values.values()))


def _sample_indices(n_items: int, n_samples: int, seed: int) -> np.ndarray:
    # Without replacement; beyond the dataset size the permutation repeats.
    order = rng_for(seed).permutation(n_items)
    if n_samples <= n_items:
        return order[:n_samples]
    reps = -(-n_samples // n_items)
    return np.tile(order, reps)[:n_samples]


def estimate_fisher_diag(params: VariationalParams, dataset, n_samples: int, head: int,
                         seed: int, task_index: int = 0) -> FisherDiag:
    """
    Empirical diagonal Fisher at theta = mu:
    F_i = 1/n sum_n (d log p(y_n | mu, x_n) / d theta_i)^2,
    one example per backward pass with the true labels.
    Heads other than `head` receive zeros.
    """
    inputs = np.asarray(dataset.inputs, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if labels.shape[0] == 0:
        raise DatasetError("Cannot estimate Fisher information on an empty dataset")
    if n_samples < 1:
        raise DatasetError(f"Fisher estimation needs n_samples >= 1, got {n_samples}")

    used = list(params.shared) + [params.head(head)]
    sums = {key: np.zeros(mu.shape) for key, mu, _ in params.entries()}
    for i in _sample_indices(labels.shape[0], n_samples, seed):
        nll = ops.softmax_cross_entropy(forward_mean(params, inputs[i:i + 1], head), labels[i:i + 1])
        nll.backward()
        for layer in used:
            sums[(layer.name, "w")] += layer.w_mu.grad ** 2
            sums[(layer.name, "b")] += layer.b_mu.grad ** 2

    fisher = FisherDiag.from_arrays(task_index, n_samples, {k: v / n_samples for k, v in sums.items()})
    logger.info(f"Fisher estimated for task {task_index} on {n_samples} samples (trace={fisher.total():.4g})")
    return fisher


def dump_fisher(fisher: FisherDiag) -> bytes:
    entries = [(layer, f"{kind}_fisher", values) for (layer, kind), values in fisher.values.items()]
    return write_container(KIND_FISHER, fisher.task_index, fisher.sample_count, entries)


def load_fisher(data: bytes) -> FisherDiag:
    task_index, sample_count, entries = read_container(data, KIND_FISHER)
    values = {}
    for layer, role, arr in entries:
        kind, _, stat = role.partition("_")
        if stat != "fisher":
            raise FormatError(f"Unknown Fisher role '{role}'")
        values[(layer, kind)] = arr
    return FisherDiag.from_arrays(task_index, sample_count, values)


def save_fisher(fisher: FisherDiag, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dump_fisher(fisher))
    return path
