
from typing import Optional, Tuple

import numpy as np

from ..data.dataset import Dataset
from ..errors import ConfigError, DatasetError
from ..utils.seeding import rng_for

STRATEGIES = ("random", "k-center")


def k_center_greedy(x: np.ndarray, k: int, first: int) -> np.ndarray:
    """Farthest-point selection under Euclidean distance, starting from `first`."""
    selected = [first]
    mins = np.linalg.norm(x - x[first], axis=1)
    mins[first] = -1.0
    while len(selected) < k:
        j = int(np.argmax(mins))
        selected.append(j)
        mins = np.minimum(mins, np.linalg.norm(x - x[j], axis=1))
        mins[selected] = -1.0
    return np.asarray(selected, dtype=np.int64)


def select_coreset(data, k: int, strategy: str, seed, first_index: Optional[int] = None) -> np.ndarray:
    """
    Indices of k points of `data` (a Dataset or an [N x d] array).
    random: uniform without replacement. k-center: greedy farthest point on the raw
    inputs, first centre uniform at random unless `first_index` is given.
    """
    x = np.asarray(data.inputs if isinstance(data, Dataset) else data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if k > n:
        raise DatasetError(f"Coreset of size {k} requested from {n} points")
    if k < 0:
        raise DatasetError(f"Coreset size must be >= 0, got {k}")
    if k == 0:
        return np.empty(0, dtype=np.int64)

    rng = rng_for(seed)
    if strategy == "random":
        return rng.choice(n, size=k, replace=False).astype(np.int64)
    if strategy == "k-center":
        first = int(rng.integers(n)) if first_index is None else int(first_index)
        return k_center_greedy(x, k, first)
    raise ConfigError(f"Unknown coreset strategy '{strategy}', expected one of {STRATEGIES}")


def split_coreset(data: Dataset, indices: np.ndarray) -> Tuple[Optional[Dataset], Dataset]:
    """(remainder, coreset); the remainder is None when every point went into the coreset."""
    coreset = data.subset(indices)
    if len(np.unique(indices)) == len(data):
        return None, coreset
    return data.without(indices), coreset
