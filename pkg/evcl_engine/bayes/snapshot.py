
from dataclasses import dataclass
from types import MappingProxyType
from typing import Collection, Dict, Mapping, Optional, Tuple

import numpy as np

from ..config import Config
from ..errors import AlignmentError
from .network import NetworkSpec, ParamKey, VariationalParams


def _frozen(arrays: Dict[ParamKey, np.ndarray]) -> Mapping[ParamKey, np.ndarray]:
    out = {}
    for key, value in arrays.items():
        arr = np.array(value, dtype=np.float64, copy=True)
        arr.setflags(write=False)
        out[key] = arr
    return MappingProxyType(out)


@dataclass(frozen=True)
class PosteriorSnapshot:
    """
    Frozen (mu, sigma^2) of every parameter, taken at the end of a task.
    Serves as the next task's prior and as the EWC anchor.
    """
    task_index: int
    mu: Mapping[ParamKey, np.ndarray]
    var: Mapping[ParamKey, np.ndarray]

    @classmethod
    def from_arrays(cls, task_index: int, mu: Dict[ParamKey, np.ndarray],
                    var: Dict[ParamKey, np.ndarray]) -> "PosteriorSnapshot":
        if list(mu) != list(var):
            raise AlignmentError("snapshot mean and variance keys differ")
        for key in mu:
            if np.shape(mu[key]) != np.shape(var[key]):
                raise AlignmentError(f"{key}: mean shape {np.shape(mu[key])} != variance shape {np.shape(var[key])}")
            if np.any(np.asarray(var[key]) <= 0):
                raise AlignmentError(f"{key}: variances must be positive")
        return cls(task_index, _frozen(mu), _frozen(var))

    def __reduce__(self):
        return (PosteriorSnapshot.from_arrays, (self.task_index, dict(self.mu), dict(self.var)))

    def keys(self) -> Tuple[ParamKey, ...]:
        return tuple(self.mu.keys())

    def equals(self, other: "PosteriorSnapshot") -> bool:
        return (self.keys() == other.keys()
                and all(np.array_equal(self.mu[k], other.mu[k]) for k in self.keys())
                and all(np.array_equal(self.var[k], other.var[k]) for k in self.keys()))


def take_snapshot(params: VariationalParams, task_index: int,
                  keep_layers: Collection[str] = (), base: Optional[PosteriorSnapshot] = None) -> PosteriorSnapshot:
    """
    Freeze the live (mu, sigma^2). Layers named in `keep_layers` are copied from `base`
    instead, which keeps heads that were never trained at their task-0 prior.
    """
    if keep_layers and base is None:
        raise AlignmentError("keep_layers needs a base snapshot to copy from")
    mu, var = {}, {}
    for key, mu_node, rho_node in params.entries():
        if key[0] in keep_layers:
            mu[key] = base.mu[key]
            var[key] = base.var[key]
        else:
            mu[key] = mu_node.value
            var[key] = np.exp(rho_node.value)
    return PosteriorSnapshot.from_arrays(task_index, mu, var)


def initial_prior(spec: NetworkSpec, variance: float = Config.PRIOR_VARIANCE) -> PosteriorSnapshot:
    """Task-0 prior N(0, variance) over every parameter, heads included."""
    mu, var = {}, {}
    for key, shape in spec.parameter_shapes():
        mu[key] = np.zeros(shape)
        var[key] = np.full(shape, float(variance))
    return PosteriorSnapshot.from_arrays(0, mu, var)


def check_aligned(params: VariationalParams, snapshot: PosteriorSnapshot, what: str = "snapshot"):
    keys = [key for key, _, _ in params.entries()]
    if keys != list(snapshot.keys()):
        raise AlignmentError(f"{what} keys {list(snapshot.keys())} do not match parameters {keys}")
    for key, mu_node, _ in params.entries():
        if snapshot.mu[key].shape != mu_node.shape:
            raise AlignmentError(f"{what} {key}: shape {snapshot.mu[key].shape} != parameter shape {mu_node.shape}")
