
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..bayes.network import NetworkSpec, accuracy, init_posterior
from ..bayes.snapshot import PosteriorSnapshot, initial_prior, take_snapshot
from ..data.dataset import Dataset, Task, TaskStream
from ..errors import DatasetError, DomainError
from ..objectives.fisher import FisherDiag, estimate_fisher_diag
from ..utils.seeding import rng_for
from .coreset import select_coreset, split_coreset
from .methods import MethodConfig, baseline_loss_dispatch
from .optimizer import Adam
from .state import ContinualState, CoresetChunk

logger = logging.getLogger(__name__)

# Salts that keep the random streams of different phases apart.
PHASE_TRAIN = 0
PHASE_CORESET_TRAIN = 1
PHASE_CORESET_SELECT = 2
PHASE_FISHER = 3
PHASE_EVAL = 4


@dataclass
class TrainResult:
    state: ContinualState
    trace: List[float]


@dataclass
class SequenceResult:
    """Lower-triangular accuracy[t, tau] (NaN for tau > t) plus per-task artefacts."""
    method: str
    seed: int
    accuracy: np.ndarray
    snapshots: List[PosteriorSnapshot] = field(default_factory=list)
    loss_traces: List[List[float]] = field(default_factory=list)
    eval_times: List[float] = field(default_factory=list)
    # Fisher held by the EWC methods after each task, None elsewhere.
    fishers: List[Optional[FisherDiag]] = field(default_factory=list)

    def average_accuracy(self) -> np.ndarray:
        return np.array([np.mean(self.accuracy[t, :t + 1]) for t in range(self.accuracy.shape[0])])

    def backward_transfer(self) -> float:
        T = self.accuracy.shape[0]
        if T < 2:
            return 0.0
        final = self.accuracy[T - 1, :T - 1]
        learned = np.diag(self.accuracy)[:T - 1]
        return float(np.mean(final - learned))


def train_one_task(state: ContinualState, data: Dataset, config: MethodConfig, head: int,
                   task_index: int, phase: int = PHASE_TRAIN) -> TrainResult:
    """
    `config.epochs` epochs of seeded shuffled minibatches with a fresh Adam.
    Only the shared layers and `head` are optimised; point baselines train mu only.
    """
    n = len(data) if data is not None else 0
    if n == 0:
        raise DatasetError(f"Task {task_index + 1} has no training data")
    params = state.params
    optimizer = Adam(params.trainable(head, means_only=not config.trains_variance), lr=config.learning_rate)
    batch_size = min(config.batch_size, n)
    n_batches = math.ceil(n / batch_size)
    kl_scale = 1.0 / n

    trace: List[float] = []
    for epoch in range(config.epochs):
        order = rng_for(config.seed, phase, task_index, epoch).permutation(n)
        for b in range(n_batches):
            idx = order[b * batch_size:(b + 1) * batch_size]
            batch = (data.inputs[idx], data.labels[idx])
            loss = baseline_loss_dispatch(config, params, batch, state, head, kl_scale,
                                          seed=(config.seed, phase, task_index, epoch, b))
            loss.backward()
            optimizer.step()
            trace.append(loss.total)
        logger.debug(f"[{config.name}] task {task_index + 1} epoch {epoch + 1}: "
                     f"mean loss {np.mean(trace[-n_batches:]):.5f}")
    return TrainResult(state, trace)


def finalize_task(state: ContinualState, data: Optional[Dataset], config: MethodConfig, head: int,
                  task_index: int, coreset_chunk: Optional[CoresetChunk] = None) -> ContinualState:
    """
    Freeze the live posterior as the next prior, refresh anchor and Fisher for the
    EWC methods, and store the task's coreset points. Heads not trained so far stay
    at the task-0 prior.
    """
    t = task_index + 1
    if config.method != "coreset-only":
        state.trained_heads.add(head)
        snapshot = take_snapshot(state.params, t, keep_layers=state.untrained_head_layers(),
                                 base=state.base_prior)
        state.update_prior(snapshot)
        if config.uses_ewc and data is not None:
            n = min(config.fisher_samples, len(data))
            fisher = estimate_fisher_diag(state.params, data, n, head,
                                          seed=(config.seed, PHASE_FISHER, task_index), task_index=t)
            if config.ewc_online and state.fisher is not None:
                fisher = state.fisher.accumulate(fisher)
            state.update_anchor(snapshot, fisher)
    if coreset_chunk is not None:
        state.add_coreset(coreset_chunk)
        logger.info(f"[{config.name}] coreset now holds {state.coreset_points} points")
    state.completed_tasks = t
    return state


def merge_coreset(chunks: Sequence[CoresetChunk]) -> Dataset:
    if not chunks:
        raise DatasetError("No coreset points stored")
    return Dataset(np.concatenate([c.data.inputs for c in chunks]),
                   np.concatenate([c.data.labels for c in chunks]),
                   max(c.data.num_classes for c in chunks))


def fine_tune_on_coreset(state: ContinualState, config: MethodConfig,
                         task_index: Optional[int] = None) -> ContinualState:
    """
    Fine-tune a clone of `state`; `state` itself is left untouched.
    Without `task_index` every stored chunk is merged and trained in one pass (single head).
    With it, only that task's chunk is used, through that task's head.
    """
    tune_config = replace(config, epochs=config.coreset_epochs if config.coreset_epochs is not None else config.epochs)
    if task_index is None:
        chunks = list(state.coreset)
        heads = {c.head for c in chunks}
        if len(heads) > 1:
            raise DomainError(f"Cannot merge coreset chunks across heads {sorted(heads)}")
    else:
        chunks = [c for c in state.coreset if c.task_index == task_index]
    data = merge_coreset(chunks)
    tuned = state.clone()
    train_one_task(tuned, data, tune_config, chunks[0].head, chunks[-1].task_index, phase=PHASE_CORESET_TRAIN)
    return tuned


def _task_accuracy(state: ContinualState, task: Task, upto: int, spec: NetworkSpec, config: MethodConfig) -> float:
    return accuracy(state.params, task.test.inputs, task.test.labels, spec.head_for_task(task.head),
                    config.mc_eval_samples, seed=(config.seed, PHASE_EVAL, upto, task.index))


def evaluate_tasks(state: ContinualState, stream: TaskStream, upto: int, spec: NetworkSpec,
                   config: MethodConfig) -> np.ndarray:
    return np.array([_task_accuracy(state, stream.tasks[tau], upto, spec, config) for tau in range(upto + 1)])


def evaluate_with_coreset(state: ContinualState, stream: TaskStream, upto: int, spec: NetworkSpec,
                          config: MethodConfig) -> np.ndarray:
    """
    Single head: one clone fine-tuned on the merged coreset scores every task.
    Multi head: task tau is scored by its own clone, fine-tuned on coreset tau through head tau.
    """
    if spec.head_mode == "single":
        return evaluate_tasks(fine_tune_on_coreset(state, config), stream, upto, spec, config)
    row = np.empty(upto + 1)
    for tau in range(upto + 1):
        tuned = fine_tune_on_coreset(state, config, task_index=tau)
        row[tau] = _task_accuracy(tuned, stream.tasks[tau], upto, spec, config)
    return row


def run_task_sequence(stream: TaskStream, config: MethodConfig, spec: NetworkSpec,
                      on_row: Optional[Callable[[int, np.ndarray, float], None]] = None) -> SequenceResult:
    """
    Train through the stream task by task. Coreset methods train the propagated posterior
    on the non-coreset points and evaluate a throwaway clone fine-tuned on the coreset.
    """
    T = len(stream)
    params = init_posterior(spec, config.seed)
    if config.prior_variance is None:
        prior = take_snapshot(params, 0)
    else:
        prior = initial_prior(spec, config.prior_variance)
    state = ContinualState(params=params, prior=prior)
    result = SequenceResult(method=config.name, seed=config.seed, accuracy=np.full((T, T), np.nan))
    start = time.perf_counter()

    for task in stream:
        k = task.index
        head = spec.head_for_task(task.head)
        train_data, chunk = task.train, None
        if config.uses_coreset:
            idx = select_coreset(task.train, min(config.coreset_size, len(task.train)),
                                 config.coreset_strategy, seed=(config.seed, PHASE_CORESET_SELECT, k))
            train_data, coreset_data = split_coreset(task.train, idx)
            chunk = CoresetChunk(task_index=k, head=head, data=coreset_data)

        trace: List[float] = []
        if config.method != "coreset-only" and train_data is not None:
            trace = train_one_task(state, train_data, config, head, k).trace
        result.loss_traces.append(trace)

        finalize_task(state, train_data if config.method != "coreset-only" else None, config, head, k, chunk)
        result.snapshots.append(state.prior)
        result.fishers.append(state.fisher)

        if config.uses_coreset:
            row = evaluate_with_coreset(state, stream, k, spec, config)
        else:
            row = evaluate_tasks(state, stream, k, spec, config)
        result.accuracy[k, :k + 1] = row
        elapsed = time.perf_counter() - start
        result.eval_times.append(elapsed)
        logger.info(f"[{config.name} seed={config.seed}] after task {k + 1}/{T} ({task.descriptor}): "
                    f"avg acc {row.mean():.4f} row={np.round(row, 4).tolist()}")
        if on_row is not None:
            on_row(k, row, elapsed)
    return result
