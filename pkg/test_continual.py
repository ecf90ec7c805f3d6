import math

import numpy as np
import pytest

from evcl_engine.autograd.node import parameter
from evcl_engine.bayes.network import NetworkSpec, accuracy, init_posterior
from evcl_engine.bayes.snapshot import initial_prior, take_snapshot
from evcl_engine.continual.coreset import select_coreset, split_coreset
from evcl_engine.continual.methods import MethodConfig, baseline_loss_dispatch
from evcl_engine.continual.optimizer import Adam
from evcl_engine.continual.state import ContinualState, CoresetChunk
from evcl_engine.continual.trainer import (PHASE_CORESET_TRAIN, SequenceResult, evaluate_tasks,
                                           evaluate_with_coreset, finalize_task, fine_tune_on_coreset,
                                           merge_coreset, run_task_sequence, train_one_task)
from evcl_engine.data.dataset import Dataset
from evcl_engine.data.streams import synth_blobs
from evcl_engine.errors import ConfigError, DatasetError, DomainError
from evcl_engine.objectives.losses import evcl_loss


def fresh_state(spec, seed=0):
    return ContinualState(params=init_posterior(spec, seed), prior=initial_prior(spec))


def stream_spec(stream, hidden=(8,)):
    return NetworkSpec(input_dim=stream.input_dim, hidden=hidden, output_dim=stream.output_dim,
                       head_mode=stream.head_mode, num_heads=stream.num_heads)


def test_method_config_validation():
    with pytest.raises(ConfigError):
        MethodConfig("replay")
    with pytest.raises(ConfigError):
        MethodConfig("vcl-kcenter-coreset")
    with pytest.raises(ConfigError):
        MethodConfig("vcl", coreset_size=10)
    with pytest.raises(ConfigError):
        MethodConfig("evcl", ewc_lambda=-1.0)
    cfg = MethodConfig("ewc")
    assert cfg.uses_ewc and not cfg.trains_variance and cfg.train_samples == 1
    assert MethodConfig("coreset-only", coreset_size=5).coreset_strategy == "random"
    assert cfg.with_overrides(seed=3, epochs=None).seed == 3


def test_adam_first_step_moves_by_learning_rate():
    p = parameter([1.0, -2.0])
    p.grad = np.array([0.5, -4.0])
    Adam([p], lr=0.1).step()
    np.testing.assert_allclose(p.value, [0.9, -1.9], atol=1e-6)


def test_train_one_task_trace_length_and_determinism(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    task = synth_stream.tasks[0]
    runs = []
    for _ in range(2):
        state = fresh_state(spec)
        result = train_one_task(state, task.train, fast_config, head=0, task_index=0)
        assert len(result.trace) == fast_config.epochs * math.ceil(len(task.train) / fast_config.batch_size)
        runs.append(state.params)
    for layer in ("hidden0", "head0"):
        assert runs[0].checksum(layer) == runs[1].checksum(layer)


def test_training_separates_a_linearly_separable_task():
    stream = synth_blobs(num_tasks=1, n=200, dim=2, separation=8.0, seed=3)
    spec = stream_spec(stream)
    config = MethodConfig("vcl", epochs=50, batch_size=32, learning_rate=0.01, mc_train_samples=2,
                          mc_eval_samples=10)
    state = fresh_state(spec)
    train = stream.tasks[0].train
    train_one_task(state, train, config, head=0, task_index=0)
    assert accuracy(state.params, train.inputs, train.labels, 0, 10, seed=0) >= 0.99


def test_only_shared_layers_and_active_head_move(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    state = fresh_state(spec)
    before = {name: state.params.checksum(name) for name in ("hidden0", "head0", "head1", "head2")}
    train_one_task(state, synth_stream.tasks[1].train, fast_config, head=1, task_index=1)
    assert state.params.checksum("head0") == before["head0"]
    assert state.params.checksum("head2") == before["head2"]
    assert state.params.checksum("head1") != before["head1"]
    assert state.params.checksum("hidden0") != before["hidden0"]


def test_point_baselines_leave_variances_alone(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    state = fresh_state(spec)
    rho_before = state.params.heads[0].w_rho.value.copy()
    train_one_task(state, synth_stream.tasks[0].train, fast_config.with_overrides(method="finetune"), 0, 0)
    np.testing.assert_array_equal(state.params.heads[0].w_rho.value, rho_before)


def test_finalize_refreshes_prior_anchor_and_fisher(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    state = fresh_state(spec)
    data = synth_stream.tasks[0].train
    train_one_task(state, data, fast_config, 0, 0)
    config = fast_config.with_overrides(fisher_samples=5000)
    finalize_task(state, data, config, 0, 0)
    live = take_snapshot(state.params, 1)
    for key in state.prior.keys():
        expected = live if key[0] in ("hidden0", "head0") else state.base_prior
        np.testing.assert_array_equal(state.prior.mu[key], expected.mu[key])
        np.testing.assert_array_equal(state.prior.var[key], expected.var[key])
    assert state.anchor is state.prior
    assert state.fisher.sample_count == len(data)
    assert state.completed_tasks == 1
    assert state.trained_heads == {0}


def test_new_heads_start_from_the_configured_prior(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    config = fast_config.with_overrides(method="vcl", prior_variance=0.5)
    state = ContinualState(params=init_posterior(spec, 0), prior=initial_prior(spec, 0.5))
    task = synth_stream.tasks[0]
    train_one_task(state, task.train, config, 0, 0)
    finalize_task(state, task.train, config, 0, 0)
    # Prior for task 2: head1 has never been trained.
    for kind in ("w", "b"):
        np.testing.assert_array_equal(state.prior.var[("head1", kind)], 0.5)
        np.testing.assert_array_equal(state.prior.mu[("head1", kind)], 0.0)
    assert not np.allclose(state.prior.var[("head0", "w")], 0.5)

    task = synth_stream.tasks[1]
    train_one_task(state, task.train, config, 1, 1)
    finalize_task(state, task.train, config, 1, 1)
    np.testing.assert_array_equal(state.prior.var[("head2", "w")], 0.5)
    np.testing.assert_array_equal(state.prior.var[("head1", "w")], np.exp(state.params.heads[1].w_rho.value))


def test_prior_at_next_task_is_the_stored_snapshot(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    state = fresh_state(spec)
    stored = []
    for task in list(synth_stream)[:2]:
        if stored:
            assert state.prior is stored[-1]
        train_one_task(state, task.train, fast_config, task.head, task.index)
        finalize_task(state, task.train, fast_config, task.head, task.index)
        stored.append(state.prior)
    assert [s.task_index for s in stored] == [1, 2]


def test_online_fisher_accumulates(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    state = fresh_state(spec)
    config = fast_config.with_overrides(ewc_online=True)
    totals = []
    for task in list(synth_stream)[:2]:
        train_one_task(state, task.train, config, task.head, task.index)
        finalize_task(state, task.train, config, task.head, task.index)
        totals.append(state.fisher)
    assert totals[1].sample_count == 2 * config.fisher_samples
    assert totals[1].values[("head0", "w")].any()


def test_coreset_selection_examples():
    x = np.array([[0.0], [1.0], [10.0]])
    # Points 0 and 10 sit at indices 0 and 2.
    assert sorted(select_coreset(x, 2, "k-center", seed=0, first_index=0).tolist()) == [0, 2]
    data = Dataset(np.random.default_rng(0).normal(size=(12, 2)), np.arange(12) % 2, 2)
    for strategy in ("random", "k-center"):
        np.testing.assert_array_equal(np.sort(select_coreset(data, 12, strategy, seed=1)), np.arange(12))
    np.testing.assert_array_equal(select_coreset(data, 5, "random", seed=4), select_coreset(data, 5, "random", seed=4))
    with pytest.raises(DatasetError):
        select_coreset(data, 13, "random", seed=0)
    with pytest.raises(ConfigError):
        select_coreset(data, 3, "herding", seed=0)


def test_split_coreset_partitions_the_task():
    data = Dataset(np.arange(20.0).reshape(10, 2), np.arange(10) % 2, 2)
    rest, core = split_coreset(data, np.array([1, 4, 7]))
    assert len(rest) == 7 and len(core) == 3
    assert not set(map(tuple, rest.inputs)) & set(map(tuple, core.inputs))
    rest, core = split_coreset(data, np.arange(10))
    assert rest is None and len(core) == 10


def test_coreset_grows_per_task_and_clone_leaves_state_untouched(synth_stream):
    spec = stream_spec(synth_stream)
    config = MethodConfig("vcl-random-coreset", coreset_size=10, epochs=2, batch_size=20,
                          mc_train_samples=2, mc_eval_samples=4)
    state = fresh_state(spec)
    for task in list(synth_stream)[:2]:
        idx = select_coreset(task.train, 10, "random", seed=(0, task.index))
        rest, core = split_coreset(task.train, idx)
        train_one_task(state, rest, config, task.head, task.index)
        finalize_task(state, rest, config, task.head, task.index, CoresetChunk(task.index, task.head, core))
        assert state.coreset_points == 10 * (task.index + 1)

    before = {name: state.params.checksum(name) for name in ("hidden0", "head0", "head1")}
    tuned = fine_tune_on_coreset(state, config, task_index=0)
    assert {name: state.params.checksum(name) for name in before} == before
    assert tuned.params.checksum("hidden0") != before["hidden0"]
    assert tuned.params.checksum("head0") != before["head0"]
    assert tuned.params.checksum("head1") == before["head1"]
    with pytest.raises(DomainError):
        fine_tune_on_coreset(state, config)

    row = evaluate_with_coreset(state, synth_stream, 1, spec, config)
    assert row.shape == (2,) and np.all((row >= 0) & (row <= 1))
    assert {name: state.params.checksum(name) for name in before} == before


def single_head_state_with_coreset(num_tasks=2):
    stream = synth_blobs(num_tasks=num_tasks, n=80, dim=2, separation=6.0, seed=5, head_mode="single")
    spec = stream_spec(stream)
    config = MethodConfig("vcl-random-coreset", coreset_size=20, epochs=3, batch_size=20,
                          mc_train_samples=2, mc_eval_samples=4)
    state = fresh_state(spec)
    for task in stream:
        idx = select_coreset(task.train, 20, "random", seed=(0, task.index))
        rest, core = split_coreset(task.train, idx)
        train_one_task(state, rest, config, 0, task.index)
        finalize_task(state, rest, config, 0, task.index, CoresetChunk(task.index, 0, core))
    return stream, spec, config, state


def test_single_head_fine_tunes_once_on_the_merged_coreset():
    stream, spec, config, state = single_head_state_with_coreset()
    tuned = fine_tune_on_coreset(state, config)

    merged = merge_coreset(state.coreset)
    assert len(merged) == 40
    np.testing.assert_array_equal(merged.inputs[:20], state.coreset[0].data.inputs)
    reference = state.clone()
    train_one_task(reference, merged, config, 0, 1, phase=PHASE_CORESET_TRAIN)
    for name in ("hidden0", "head0"):
        assert tuned.params.checksum(name) == reference.params.checksum(name)

    row = evaluate_with_coreset(state, stream, 1, spec, config)
    np.testing.assert_array_equal(row, evaluate_tasks(reference, stream, 1, spec, config))


def test_multi_head_scores_each_task_with_its_own_clone(synth_stream):
    spec = stream_spec(synth_stream)
    config = MethodConfig("vcl-random-coreset", coreset_size=10, epochs=2, batch_size=20,
                          mc_train_samples=2, mc_eval_samples=4)
    state = fresh_state(spec)
    for task in list(synth_stream)[:2]:
        idx = select_coreset(task.train, 10, "random", seed=(0, task.index))
        rest, core = split_coreset(task.train, idx)
        train_one_task(state, rest, config, task.head, task.index)
        finalize_task(state, rest, config, task.head, task.index, CoresetChunk(task.index, task.head, core))

    row = evaluate_with_coreset(state, synth_stream, 1, spec, config)
    for tau in (0, 1):
        reference = state.clone()
        train_one_task(reference, state.coreset[tau].data, config, tau, tau, phase=PHASE_CORESET_TRAIN)
        expected = evaluate_tasks(reference, synth_stream, 1, spec, config)[tau]
        assert row[tau] == expected


def test_dispatch_matches_individual_losses(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    state = fresh_state(spec)
    data = synth_stream.tasks[0].train
    train_one_task(state, data, fast_config, 0, 0)
    finalize_task(state, data, fast_config, 0, 0)
    batch = (data.inputs[:10], data.labels[:10])
    dispatched = baseline_loss_dispatch(fast_config, state.params, batch, state, 1, 0.1, seed=5)
    direct = evcl_loss(state.params, batch, state.prior, state.anchor, state.fisher, fast_config.ewc_lambda,
                       fast_config.train_samples, 0.1, 1, 5)
    assert dispatched.total == direct.total
    assert baseline_loss_dispatch(fast_config.with_overrides(method="vcl"), state.params, batch, state,
                                  1, 0.1, seed=5).ewc == 0.0
    ewc = baseline_loss_dispatch(fast_config.with_overrides(method="ewc"), state.params, batch, state,
                                 0, 0.1, seed=5)
    assert ewc.kl == 0.0 and ewc.ewc >= 0.0


def test_run_task_sequence_matrix_shape(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    result = run_task_sequence(synth_stream, fast_config, spec)
    T = len(synth_stream)
    assert result.accuracy.shape == (T, T)
    for t in range(T):
        for tau in range(T):
            assert np.isnan(result.accuracy[t, tau]) == (tau > t)
    assert [s.task_index for s in result.snapshots] == [1, 2, 3]
    assert len(result.loss_traces) == T and len(result.eval_times) == T
    assert result.eval_times == sorted(result.eval_times)
    assert [f.task_index for f in result.fishers] == [1, 2, 3]
    vcl = run_task_sequence(synth_stream, fast_config.with_overrides(method="vcl", epochs=1), spec)
    assert vcl.fishers == [None, None, None]


def test_single_task_sequence_is_plain_variational_training(fast_config):
    stream = synth_blobs(num_tasks=1, n=60, dim=2, separation=5.0, seed=2)
    spec = stream_spec(stream)
    result = run_task_sequence(stream, fast_config.with_overrides(method="vcl"), spec)
    assert result.accuracy.shape == (1, 1)
    assert result.backward_transfer() == 0.0


def test_evcl_with_zero_lambda_reproduces_vcl_matrix(synth_stream, fast_config):
    spec = stream_spec(synth_stream)
    vcl = run_task_sequence(synth_stream, fast_config.with_overrides(method="vcl"), spec)
    evcl = run_task_sequence(synth_stream, fast_config.with_overrides(ewc_lambda=0.0), spec)
    np.testing.assert_array_equal(vcl.accuracy, evcl.accuracy)
    assert vcl.loss_traces == evcl.loss_traces


def test_coreset_only_never_trains_the_propagated_state(synth_stream):
    spec = stream_spec(synth_stream)
    config = MethodConfig("coreset-only", coreset_size=10, epochs=2, batch_size=10,
                          mc_train_samples=2, mc_eval_samples=4)
    result = run_task_sequence(synth_stream, config, spec)
    assert result.loss_traces == [[], [], []]
    assert all(s.task_index == 0 for s in result.snapshots)
    assert not np.isnan(result.accuracy[2]).any()


def test_sequence_summaries():
    acc = np.array([[0.9, np.nan], [0.7, 0.95]])
    result = SequenceResult("evcl", 0, acc)
    np.testing.assert_allclose(result.average_accuracy(), [0.9, 0.825])
    assert result.backward_transfer() == pytest.approx(-0.2)
