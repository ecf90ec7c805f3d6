
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DatasetError, DomainError
from ..utils.seeding import rng_for
from .dataset import Dataset, Task, TaskStream

logger = logging.getLogger(__name__)


def build_permuted_stream(train: Dataset, test: Dataset, num_tasks: int, seed: int,
                          name: str = "permuted-mnist") -> TaskStream:
    """Task 1 keeps the pixel order; tasks 2..T each apply their own seeded permutation."""
    if num_tasks < 1:
        raise DomainError(f"num_tasks must be >= 1, got {num_tasks}")
    dim = train.dim
    identity = {c: c for c in range(train.num_classes)}
    tasks = []
    for k in range(num_tasks):
        perm = task_permutation(seed, k, dim)
        tasks.append(Task(
            index=k,
            train=Dataset(train.inputs[:, perm], train.labels, train.num_classes),
            test=Dataset(test.inputs[:, perm], test.labels, test.num_classes),
            head=0,
            label_map=identity,
            descriptor=f"permutation {k + 1}" if k else "identity",
            train_source=np.arange(len(train)),
            test_source=np.arange(len(test)),
        ))
    return TaskStream(name, tuple(tasks), head_mode="single")


def task_permutation(seed: int, task: int, dim: int) -> np.ndarray:
    return np.arange(dim) if task == 0 else rng_for(seed, task).permutation(dim)


def build_split_stream(train: Dataset, test: Dataset, pairs: Sequence[Sequence[int]],
                       name: str = "split", class_names: Optional[Sequence[str]] = None) -> TaskStream:
    """One binary task per label pair, relabelled to {0, 1}, head k for pair k."""
    flat = [int(label) for pair in pairs for label in pair]
    if len(flat) != len(set(flat)):
        raise DatasetError(f"Overlapping label pairs: {list(pairs)}")
    present = set(np.unique(train.labels)) & set(np.unique(test.labels))
    missing = [label for label in flat if label not in present]
    if missing:
        raise DatasetError(f"Unknown labels {missing}: not present in both splits")

    tasks = []
    for k, pair in enumerate(pairs):
        label_map = {int(orig): new for new, orig in enumerate(pair)}
        splits = []
        for base in (train, test):
            source = np.flatnonzero(np.isin(base.labels, list(label_map)))
            labels = np.array([label_map[int(l)] for l in base.labels[source]], dtype=np.int64)
            splits.append((Dataset(base.inputs[source], labels, len(pair)), source))
        names = [class_names[p] if class_names else str(p) for p in pair]
        tasks.append(Task(
            index=k,
            train=splits[0][0],
            test=splits[1][0],
            head=k,
            label_map=label_map,
            descriptor="/".join(names),
            train_source=splits[0][1],
            test_source=splits[1][1],
        ))
    return TaskStream(name, tuple(tasks), head_mode="multi")


def _blob_split(rng: np.random.Generator, n: int, direction: np.ndarray, separation: float) -> Dataset:
    labels = np.zeros(n, dtype=np.int64)
    labels[n // 2:] = 1
    rng.shuffle(labels)
    signs = np.where(labels == 1, 1.0, -1.0)
    inputs = signs[:, None] * (0.5 * separation) * direction[None, :] + rng.standard_normal((n, direction.size))
    return Dataset(inputs, labels, 2)


def synth_blobs(num_tasks: int, n: int, dim: int, separation: float, seed: int,
                head_mode: str = "multi", n_test: Optional[int] = None) -> TaskStream:
    """
    Two unit-variance Gaussian clusters per task at +-separation/2 along a direction
    rotated by pi * k / T in the first two coordinates. Larger separation raises the
    Bayes-optimal accuracy.
    """
    if separation <= 0:
        raise DomainError(f"separation must be > 0, got {separation}")
    if num_tasks < 1 or n < 2 or dim < 1:
        raise DomainError(f"invalid synthetic stream size (T={num_tasks}, n={n}, d={dim})")
    n_test = n if n_test is None else n_test
    tasks = []
    for k in range(num_tasks):
        direction = np.zeros(dim)
        angle = np.pi * k / num_tasks
        direction[0] = np.cos(angle)
        if dim > 1:
            direction[1] = np.sin(angle)
        rng = rng_for(seed, k)
        tasks.append(Task(
            index=k,
            train=_blob_split(rng, n, direction, separation),
            test=_blob_split(rng, n_test, direction, separation),
            head=k if head_mode == "multi" else 0,
            label_map={0: 0, 1: 1},
            descriptor=f"blobs {np.degrees(angle):.0f}deg",
        ))
    return TaskStream("synth", tuple(tasks), head_mode=head_mode)


def subset_stream(stream: TaskStream, train_per_task: Optional[int], test_per_task: Optional[int],
                  seed: int) -> TaskStream:
    """Seeded per-task subsampling for desk-scale runs."""
    def _take(ds: Dataset, source: Optional[np.ndarray], limit: Optional[int], rng) -> Tuple[Dataset, Optional[np.ndarray]]:
        if limit is None or limit >= len(ds):
            return ds, source
        idx = np.sort(rng.choice(len(ds), size=limit, replace=False))
        return ds.subset(idx), (source[idx] if source is not None else None)

    tasks: List[Task] = []
    for task in stream:
        rng = rng_for(seed, task.index, 7)
        train, train_src = _take(task.train, task.train_source, train_per_task, rng)
        test, test_src = _take(task.test, task.test_source, test_per_task, rng)
        tasks.append(Task(task.index, train, test, task.head, task.label_map, task.descriptor, train_src, test_src))
    logger.info(f"Subsampled {stream.name}: train<={train_per_task}, test<={test_per_task} per task")
    return TaskStream(stream.name, tuple(tasks), stream.head_mode)
