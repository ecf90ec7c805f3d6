
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from ..errors import DatasetError, DimensionError


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if inputs.ndim != 2:
            raise DimensionError("Dataset inputs", inputs.shape)
        if inputs.shape[0] != labels.shape[0]:
            raise DimensionError("Dataset", inputs.shape, labels.shape)
        if labels.shape[0] == 0:
            raise DatasetError("Dataset must contain at least one example")
        if not np.all(np.isfinite(inputs)):
            raise DatasetError("Dataset inputs contain NaN or Inf")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise DatasetError(f"Labels must lie in [0, {self.num_classes}), "
                               f"got [{labels.min()}, {labels.max()}]")
        object.__setattr__(self, "inputs", _readonly(inputs))
        object.__setattr__(self, "labels", _readonly(labels))

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.inputs.shape[1])

    def subset(self, indices: Sequence[int]) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices], self.num_classes)

    def without(self, indices: Sequence[int]) -> "Dataset":
        keep = np.setdiff1d(np.arange(len(self)), np.asarray(indices, dtype=np.int64))
        return self.subset(keep)


@dataclass(frozen=True)
class Task:
    index: int
    train: Dataset
    test: Dataset
    head: int
    label_map: Mapping[int, int]
    descriptor: str
    train_source: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    test_source: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "label_map", MappingProxyType(dict(self.label_map)))

    def __reduce__(self):
        return (Task, (self.index, self.train, self.test, self.head, dict(self.label_map),
                       self.descriptor, self.train_source, self.test_source))


@dataclass(frozen=True)
class TaskStream:
    name: str
    tasks: Tuple[Task, ...]
    head_mode: str

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise DatasetError("A task stream needs at least one task")
        dims = {t.train.dim for t in self.tasks} | {t.test.dim for t in self.tasks}
        if len(dims) != 1:
            raise DatasetError(f"Tasks disagree on input dimension: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    @property
    def input_dim(self) -> int:
        return self.tasks[0].train.dim

    @property
    def output_dim(self) -> int:
        return max(t.train.num_classes for t in self.tasks)

    @property
    def num_heads(self) -> int:
        return len(self.tasks) if self.head_mode == "multi" else 1
