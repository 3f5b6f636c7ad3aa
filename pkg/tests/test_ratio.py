import numpy as np
import pytest
from hypothesis import given, strategies as st

from vepo import (
    RatioEstimate,
    RatioFitConfig,
    exact_ratio,
    fit_ratio_minimax,
    kappa_policy,
    simulate_dataset,
)
from vepo.errors import CoverageError
from vepo.mdp import Dataset
from vepo.ratio import (
    _cell_features,
    corrupt_ratio,
    delta_residual,
    empirical_model_ratio,
    integrate_ratio,
    kernel_objective,
    minimax_objective,
    tabular_objective,
)
from vepo.toy import behavior_stationary_states

FAST = RatioFitConfig(n_iterations=600, seed=0)


def expected_residual(mdp, omega, f, pi, p_inf):
    """Exact expectation of the residual over independent anchor and transition draws from p_inf."""
    total = 0.0
    for s in range(2):
        for a in range(2):
            for s2 in range(2):
                for a2 in range(2):
                    for s2n in range(2):
                        w = p_inf[s, a] * p_inf[s2, a2] * mdp.transition[s2, a2, s2n]
                        total += w * float(delta_residual(omega, f, pi, mdp.gamma, (s2, a2, s2n), (s, a)))
    return total


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_residual_has_zero_mean_at_truth(seed, kappa):
    from vepo import build_toy_mdp, toy_behavior

    mdp = build_toy_mdp()
    pi = kappa_policy(kappa)
    r = exact_ratio(mdp, pi, toy_behavior())
    f = np.random.default_rng(seed).normal(size=(2, 2, 2, 2))
    # the residual is centered per anchor, so the mean vanishes for every test function
    assert abs(expected_residual(mdp, r.conditional, f, pi, r.stationary)) < 1e-10


def test_residual_nonzero_for_wrong_ratio(toy, behavior):
    pi = kappa_policy(0.5)
    r = exact_ratio(toy, pi, behavior)
    f = np.random.default_rng(0).normal(size=(2, 2, 2, 2))
    assert abs(expected_residual(toy, np.ones((2, 2, 2, 2)), f, pi, r.stationary)) > 1e-3


def test_residual_monte_carlo_mean(toy, behavior):
    pi = kappa_policy(0.3)
    r = exact_ratio(toy, pi, behavior)
    data = simulate_dataset(toy, behavior, 200, 250, seed=1, start_dist=behavior_stationary_states(toy))
    f = np.random.default_rng(2).normal(size=(2, 2, 2, 2))
    rng = np.random.default_rng(3)
    j = rng.permutation(len(data))  # anchors paired with an independent-ish shuffle of tuples
    vals = delta_residual(r.conditional, f, pi, toy.gamma, (data.s, data.a, data.s_next), (data.s[j], data.a[j]))
    assert abs(vals.mean()) < 4 * vals.std() / np.sqrt(vals.size)


@given(st.integers(0, 2**31 - 1))
def test_tabular_objective_equals_indicator_gram(seed):
    from vepo import toy_behavior

    rng = np.random.default_rng(seed)
    b = 30
    s, a, sn = rng.integers(0, 2, b), rng.integers(0, 2, b), rng.integers(0, 2, b)
    pi = toy_behavior()
    omega_t = rng.uniform(0.2, 3.0, size=(4, 4))
    phi = _cell_features(s, a, sn, pi, 0.9)
    l1, g1 = tabular_objective(s * 2 + a, phi, omega_t, 0.9, 4)
    l2, g2 = kernel_objective(s, a, sn, pi, omega_t, 0.9, kernel="indicator")
    assert abs(l1 - l2) < 1e-10 * max(1.0, abs(l2))
    assert np.max(np.abs(g1 - g2)) < 1e-10


@pytest.mark.parametrize("kernel", ["indicator", "rbf"])
def test_objective_gradient_finite_difference(kernel, behavior):
    rng = np.random.default_rng(4)
    b = 20
    s, a, sn = rng.integers(0, 2, b), rng.integers(0, 2, b), rng.integers(0, 2, b)
    omega_t = rng.uniform(0.2, 3.0, size=(4, 4))
    _, g = kernel_objective(s, a, sn, behavior, omega_t, 0.9, kernel=kernel, bandwidth=1.0)
    eps = 1e-6
    for x, y in [(0, 0), (1, 3), (3, 2)]:
        up, dn = omega_t.copy(), omega_t.copy()
        up[x, y] += eps
        dn[x, y] -= eps
        fd = (kernel_objective(s, a, sn, behavior, up, 0.9, kernel=kernel, bandwidth=1.0, grad=False)[0]
              - kernel_objective(s, a, sn, behavior, dn, 0.9, kernel=kernel, bandwidth=1.0, grad=False)[0]) / (2 * eps)
        assert abs(fd - g[x, y]) < 1e-6


def test_objective_smallest_near_truth(toy, behavior):
    pi = kappa_policy(0.5)
    data = simulate_dataset(toy, behavior, 100, 100, seed=5, start_dist=behavior_stationary_states(toy))
    truth = exact_ratio(toy, pi, behavior).conditional
    at_truth = minimax_objective(data, truth, pi, toy.gamma)
    rng = np.random.default_rng(0)
    for _ in range(10):
        other = truth * rng.uniform(0.5, 1.5, size=truth.shape)
        assert at_truth < minimax_objective(data, other, pi, toy.gamma)


def test_fit_is_normalized_and_deterministic(toy, behavior):
    data = simulate_dataset(toy, behavior, 20, 25, seed=6)
    pi = kappa_policy(0.6)
    est = fit_ratio_minimax(data, pi, toy.gamma, FAST, nu=toy.reference_dist)
    assert np.allclose(est.normalization_sums(), 1.0, atol=1e-12)
    assert np.all(est.conditional > 0)
    again = fit_ratio_minimax(data, pi, toy.gamma, FAST, nu=toy.reference_dist)
    assert np.array_equal(est.conditional, again.conditional)
    assert np.allclose(est.integrated, integrate_ratio(est.conditional, pi, toy.reference_dist))


def test_fit_approaches_empirical_model(toy, behavior):
    data = simulate_dataset(toy, behavior, 50, 50, seed=7, start_dist=behavior_stationary_states(toy))
    pi = kappa_policy(0.5)
    fit = fit_ratio_minimax(data, pi, toy.gamma, RatioFitConfig(seed=1))
    ref = empirical_model_ratio(data, pi, toy.gamma)
    truth = exact_ratio(toy, pi, behavior).conditional
    assert np.max(np.abs(fit.conditional - truth)) < 0.6
    assert np.max(np.abs(ref.conditional - truth)) < 0.6


def test_rbf_kernel_fit_runs(toy, behavior):
    data = simulate_dataset(toy, behavior, 10, 20, seed=8)
    est = fit_ratio_minimax(data, kappa_policy(0.5), toy.gamma,
                            RatioFitConfig(kernel="rbf", n_iterations=100, batch_size=64, seed=0))
    assert np.all(np.isfinite(est.conditional))
    assert np.allclose(est.normalization_sums(), 1.0, atol=1e-12)


def test_fit_coverage_error(toy):
    data = Dataset([0, 0], [0, 1], [0, 1], [0, 0], [1.0, 0.0], [1, 0], 2, 2)
    with pytest.raises(CoverageError):
        fit_ratio_minimax(data, kappa_policy(0.5), toy.gamma, FAST)


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        RatioFitConfig(step_size=0.0)
    with pytest.raises(ValueError):
        RatioFitConfig(kernel="laplace")


@given(st.integers(0, 2**31 - 1))
def test_corruption_adds_bounded_noise(seed):
    from vepo import build_toy_mdp, toy_behavior

    mdp = build_toy_mdp()
    pi = kappa_policy(0.5)
    r = exact_ratio(mdp, pi, toy_behavior())
    est = RatioEstimate(np.array(r.conditional), np.array(r.integrated), np.array(r.stationary))
    bad = corrupt_ratio(est, seed, pi, mdp.reference_dist)
    shift = bad.conditional - est.conditional
    assert np.all((shift >= 0) & (shift <= 2))
    assert np.allclose(bad.integrated, integrate_ratio(bad.conditional, pi, mdp.reference_dist))


def test_ratio_csv_roundtrip(tmp_path, toy, behavior):
    pi = kappa_policy(0.4)
    r = exact_ratio(toy, pi, behavior)
    est = RatioEstimate(np.array(r.conditional), np.array(r.integrated))
    est.to_csv(tmp_path / "w.csv")
    back = RatioEstimate.from_csv(tmp_path / "w.csv", pi, toy.reference_dist)
    assert np.array_equal(back.conditional, est.conditional)
    assert np.allclose(back.integrated, r.integrated, atol=1e-12)
