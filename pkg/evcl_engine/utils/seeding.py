
from typing import List

import numpy as np


def _flatten(keys) -> List[int]:
    flat = []
    for key in keys:
        if isinstance(key, (tuple, list)):
            flat.extend(_flatten(key))
        elif key is None:
            raise ValueError("seed keys must be integers, got None")
        else:
            flat.append(int(key))
    return flat


def rng_for(*keys) -> np.random.Generator:
    """
    Generator keyed by integers (or tuples of them), e.g. (run seed, task, epoch, batch).
    Equal keys give equal streams on every process and platform.
    """
    flat = _flatten(keys)
    if not flat:
        raise ValueError("rng_for needs at least one key")
    return np.random.default_rng(flat)
