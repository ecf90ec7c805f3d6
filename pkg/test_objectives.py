import numpy as np
import pytest

from conftest import assert_grad_close, finite_difference
from evcl_engine.autograd import ops
from evcl_engine.bayes.network import NetworkSpec, forward_mean, init_posterior
from evcl_engine.bayes.snapshot import initial_prior, take_snapshot
from evcl_engine.data.dataset import Dataset
from evcl_engine.errors import AlignmentError, DatasetError, DomainError
from evcl_engine.objectives.fisher import FisherDiag, estimate_fisher_diag
from evcl_engine.objectives.losses import evcl_loss, ewc_penalty, expected_nll, vcl_loss


def random_problem(seed: int, classes: int = 3, batch: int = 5):
    """Hidden-free network (smooth everywhere) with a drifted anchor and random Fisher."""
    rng = np.random.default_rng(seed)
    spec = NetworkSpec(input_dim=3, hidden=(), output_dim=classes)
    params = init_posterior(spec, seed=seed)
    for _, mu, rho in params.entries():
        rho.value[...] = rng.uniform(-3.0, -1.0, size=rho.shape)
    anchor = take_snapshot(params, 1)
    for _, mu, rho in params.entries():
        mu.value[...] += rng.normal(0.0, 0.1, size=mu.shape)
        rho.value[...] += rng.normal(0.0, 0.1, size=rho.shape)
    fisher = FisherDiag.from_arrays(1, 10, {key: rng.uniform(0.0, 2.0, size=mu.shape)
                                            for key, mu, _ in params.entries()})
    prior = initial_prior(spec, variance=float(rng.uniform(0.5, 2.0)))
    x = rng.normal(size=(batch, 3))
    y = rng.integers(0, classes, size=batch)
    return params, prior, anchor, fisher, (x, y)


def check_gradients(params, loss_fn):
    loss_fn().backward()
    analytic = [(node, node.grad.copy()) for _, mu, rho in params.entries() for node in (mu, rho)]
    for node, grad in analytic:
        assert_grad_close(grad, finite_difference(lambda: loss_fn().total, node))


def test_vcl_loss_gradients_match_finite_differences():
    for seed in range(100):
        params, prior, _, _, batch = random_problem(seed)
        check_gradients(params, lambda: vcl_loss(params, batch, prior, mc_samples=3, kl_scale=0.2,
                                                 head=0, seed=seed))


def test_ewc_penalty_gradients_match_finite_differences():
    for seed in range(100):
        params, _, anchor, fisher, _ = random_problem(seed)
        node = ewc_penalty(params, anchor, fisher, lam=7.0)
        node.backward()
        for _, mu, rho in params.entries():
            for p in (mu, rho):
                assert_grad_close(p.grad, finite_difference(
                    lambda: ewc_penalty(params, anchor, fisher, lam=7.0).item(), p))


def test_evcl_loss_gradients_match_finite_differences():
    for seed in range(100):
        params, prior, anchor, fisher, batch = random_problem(seed)
        check_gradients(params, lambda: evcl_loss(params, batch, prior, anchor, fisher, lam=5.0,
                                                  mc_samples=2, kl_scale=0.1, head=0, seed=seed))


def test_vcl_loss_at_prior_is_pure_nll():
    params, _, _, _, (x, y) = random_problem(0)
    prior = take_snapshot(params, 0)
    loss = vcl_loss(params, (x, y), prior, mc_samples=2, kl_scale=0.5, head=0, seed=1)
    assert loss.kl == pytest.approx(0.0, abs=1e-12)
    assert loss.total == pytest.approx(expected_nll(params, x, y, 0, 2, 1).item(), abs=1e-12)


def test_zero_kl_scale_is_maximum_likelihood():
    params, prior, _, _, (x, y) = random_problem(1)
    loss = vcl_loss(params, (x, y), prior, mc_samples=4, kl_scale=0.0, head=0, seed=2)
    assert loss.total == loss.nll


def test_vcl_loss_rejects_empty_batch():
    params, prior, _, _, _ = random_problem(2)
    with pytest.raises(DatasetError):
        vcl_loss(params, (np.zeros((0, 3)), np.zeros(0, dtype=int)), prior, 1, 1.0, 0, 0)


def test_ewc_penalty_examples():
    spec = NetworkSpec(input_dim=1, hidden=(), output_dim=1)
    params = init_posterior(spec, seed=0)
    w_mu = params.heads[0].w_mu
    anchor = take_snapshot(params, 1)
    fisher = FisherDiag.from_arrays(1, 1, {("head0", "w"): np.array([[2.0]]), ("head0", "b"): np.zeros(1)})

    assert ewc_penalty(params, anchor, fisher, lam=100.0).item() == 0.0
    w_mu.value[...] += 0.1
    assert ewc_penalty(params, anchor, fisher, lam=100.0).item() == pytest.approx(1.0)
    with pytest.raises(DomainError):
        ewc_penalty(params, anchor, fisher, lam=-1.0)


def test_evcl_with_zero_lambda_is_bit_identical_to_vcl():
    for seed in range(50):
        params, prior, anchor, fisher, batch = random_problem(seed)
        vcl = vcl_loss(params, batch, prior, 3, 0.25, 0, seed)
        vcl.backward()
        vcl_grads = [p.grad.copy() for _, mu, rho in params.entries() for p in (mu, rho)]

        evcl = evcl_loss(params, batch, prior, anchor, fisher, 0.0, 3, 0.25, 0, seed)
        evcl.backward()
        evcl_grads = [p.grad.copy() for _, mu, rho in params.entries() for p in (mu, rho)]

        assert evcl.total == vcl.total
        assert evcl.ewc == 0.0
        for a, b in zip(vcl_grads, evcl_grads):
            np.testing.assert_array_equal(a, b)


def test_evcl_first_task_has_no_penalty_and_needs_paired_anchor():
    params, prior, anchor, fisher, batch = random_problem(3)
    first = evcl_loss(params, batch, prior, None, None, 100.0, 2, 0.1, 0, 0)
    assert first.ewc == 0.0
    assert first.total == vcl_loss(params, batch, prior, 2, 0.1, 0, 0).total
    with pytest.raises(AlignmentError):
        evcl_loss(params, batch, prior, anchor, None, 100.0, 2, 0.1, 0, 0)


def test_evcl_total_grows_with_weighted_drift():
    rng = np.random.default_rng(8)
    for seed in range(20):
        params, prior, anchor, fisher, batch = random_problem(seed)
        direction = {key: rng.normal(size=mu.shape) for key, mu, _ in params.entries()}
        penalties = []
        for scale in (0.5, 1.0, 2.0):
            for key, mu, _ in params.entries():
                mu.value[...] = anchor.mu[key] + scale * direction[key]
            loss = evcl_loss(params, batch, prior, anchor, fisher, 50.0, 2, 0.1, 0, seed)
            assert loss.total == pytest.approx(loss.nll + loss.kl + loss.ewc)
            penalties.append(loss.ewc)
        assert penalties[0] < penalties[1] < penalties[2]


def logistic_brute_force_fisher(w, b, x, y):
    """Per-example squared CE gradients of softmax(x w + b), averaged."""
    logits = x @ w + b
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    delta = p.copy()
    delta[np.arange(len(y)), y] -= 1.0
    gw = np.einsum("ni,nc->nic", x, delta)
    return (gw ** 2).mean(axis=0), (delta ** 2).mean(axis=0)


def test_fisher_matches_brute_force_on_logistic_model():
    spec = NetworkSpec(input_dim=1, hidden=(), output_dim=2)
    params = init_posterior(spec, seed=4)
    x = np.array([[-1.0], [0.5], [1.5], [2.0]])
    y = np.array([0, 1, 1, 0])
    fisher = estimate_fisher_diag(params, Dataset(x, y, 2), n_samples=4, head=0, seed=0)
    head = params.heads[0]
    fw, fb = logistic_brute_force_fisher(head.w_mu.value, head.b_mu.value, x, y)
    np.testing.assert_allclose(fisher.values[("head0", "w")], fw, rtol=0, atol=1e-10)
    np.testing.assert_allclose(fisher.values[("head0", "b")], fb, rtol=0, atol=1e-10)
    assert fisher.sample_count == 4


def test_fisher_full_pass_is_invariant_to_cycling():
    spec = NetworkSpec(input_dim=2, hidden=(3,), output_dim=2)
    params = init_posterior(spec, seed=1)
    rng = np.random.default_rng(0)
    data = Dataset(rng.normal(size=(8, 2)), rng.integers(0, 2, size=8), 2)
    once = estimate_fisher_diag(params, data, 8, 0, seed=3)
    twice = estimate_fisher_diag(params, data, 16, 0, seed=3)
    for key in once.values:
        np.testing.assert_allclose(once.values[key], twice.values[key], rtol=1e-12, atol=1e-15)


def test_fisher_positive_on_input_weights_of_uniform_predictor():
    spec = NetworkSpec(input_dim=2, hidden=(), output_dim=2)
    params = init_posterior(spec, seed=0)
    for _, mu, _ in params.entries():
        mu.value[...] = 0.0
    x = np.array([[1.0, 2.0], [-1.0, -2.0], [2.0, 1.0], [-2.0, -1.0]])
    fisher = estimate_fisher_diag(params, Dataset(x, [0, 1, 0, 1], 2), 4, 0, seed=0)
    assert np.all(fisher.values[("head0", "w")] > 0)


def test_fisher_is_zero_for_unused_heads_and_nonnegative(tiny_params):
    rng = np.random.default_rng(1)
    data = Dataset(rng.normal(size=(10, 3)), rng.integers(0, 2, size=10), 2)
    fisher = estimate_fisher_diag(tiny_params, data, 10, head=0, seed=0, task_index=1)
    assert not fisher.values[("head1", "w")].any()
    assert not fisher.values[("head1", "b")].any()
    assert all(np.all(v >= 0) for v in fisher.values.values())
    assert fisher.values[("head0", "w")].any()


def test_fisher_accumulate_sums_entries(tiny_params):
    a = FisherDiag.from_arrays(1, 5, {key: np.ones(mu.shape) for key, mu, _ in tiny_params.entries()})
    b = FisherDiag.from_arrays(2, 7, {key: np.full(mu.shape, 2.0) for key, mu, _ in tiny_params.entries()})
    total = a.accumulate(b)
    assert (total.task_index, total.sample_count) == (2, 12)
    assert total.total() == pytest.approx(a.total() + b.total())
    with pytest.raises(AlignmentError):
        FisherDiag.from_arrays(1, 1, {("head0", "w"): np.array([-1.0])})


def test_ce_of_single_example_matches_mean_forward():
    spec = NetworkSpec(input_dim=1, hidden=(), output_dim=2)
    params = init_posterior(spec, seed=4)
    x = np.array([[0.5]])
    head = params.heads[0]
    logits = x @ head.w_mu.value + head.b_mu.value
    expected = -np.log(np.exp(logits[0, 1]) / np.exp(logits).sum())
    assert ops.softmax_cross_entropy(forward_mean(params, x, 0), [1]).item() == pytest.approx(expected)


def test_ewc_penalty_ignores_parameters_without_fisher_weight():
    params, _, anchor, fisher, _ = random_problem(4)
    masked = FisherDiag.from_arrays(1, 10, {("head0", "w"): np.zeros_like(fisher.values[("head0", "w")]),
                                            ("head0", "b"): fisher.values[("head0", "b")]})
    before = ewc_penalty(params, anchor, masked, lam=3.0).item()
    params.heads[0].w_mu.value[...] += 5.0
    params.heads[0].w_rho.value[...] -= 1.0
    assert ewc_penalty(params, anchor, masked, lam=3.0).item() == before


def test_fisher_is_per_example_not_squared_mean_gradient():
    spec = NetworkSpec(input_dim=1, hidden=(), output_dim=2)
    params = init_posterior(spec, seed=0)
    for _, mu, _ in params.entries():
        mu.value[...] = 0.0
    # Opposite inputs with the same label: the batch-mean weight gradient cancels.
    x = np.array([[1.0], [-1.0]])
    y = np.array([0, 0])
    fisher = estimate_fisher_diag(params, Dataset(x, y, 2), 2, 0, seed=0)
    fw, _ = logistic_brute_force_fisher(np.zeros((1, 2)), np.zeros(2), x, y)
    np.testing.assert_allclose(fisher.values[("head0", "w")], fw)
    assert np.all(fisher.values[("head0", "w")] > 0)


def test_vcl_loss_matches_quadrature_on_a_logistic_toy():
    # Class-1 logit pinned at zero, so the loss reduces to softplus of a single Gaussian logit.
    spec = NetworkSpec(input_dim=1, hidden=(), output_dim=2)
    params = init_posterior(spec, seed=0)
    m_w, v_w, m_b, v_b = 0.7, 0.4, -0.3, 0.2
    head = params.heads[0]
    head.w_mu.value[...] = [[m_w, 0.0]]
    head.w_rho.value[...] = [[np.log(v_w), -40.0]]
    head.b_mu.value[...] = [m_b, 0.0]
    head.b_rho.value[...] = [np.log(v_b), -40.0]
    x = np.array([[-1.5], [0.0], [0.8], [2.0]])
    y = np.array([0, 1, 1, 0])
    samples = 20_000

    loss = vcl_loss(params, (x, y), initial_prior(spec, variance=1.0), samples, kl_scale=0.01, head=0, seed=3)

    nodes, weights = np.polynomial.hermite_e.hermegauss(80)
    weights = weights / np.sqrt(2 * np.pi)
    logit = (x[:, 0] * m_w + m_b)[:, None] + np.sqrt(x[:, 0] ** 2 * v_w + v_b)[:, None] * nodes[None, :]
    values = np.logaddexp(0.0, np.where(y == 1, 1.0, -1.0)[:, None] * logit)
    means = values @ weights
    variances = (values ** 2) @ weights - means ** 2
    standard_error = np.sqrt(variances.mean() / (samples * len(y)))
    assert abs(loss.nll - means.mean()) <= 4 * standard_error

    mu = np.array([m_w, 0.0, m_b, 0.0])
    var = np.array([v_w, np.exp(-40.0), v_b, np.exp(-40.0)])
    kl = 0.5 * np.sum(var + mu ** 2 - 1.0 - np.log(var))
    assert loss.kl == pytest.approx(0.01 * kl, rel=1e-9)
    assert loss.total == pytest.approx(loss.nll + loss.kl)
