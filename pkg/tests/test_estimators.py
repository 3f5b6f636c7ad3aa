from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from helpers import random_policy
from vepo import (
    NuisanceConfig,
    QEstimate,
    RatioFitConfig,
    crossfit_coefficients,
    eta1_crossfit,
    exact_eta1,
    kappa_policy,
    make_folds,
    oracle_nuisances,
    psi1,
    psi2,
    psi3,
    psi_total,
    simulate_dataset,
)
from vepo.errors import DimensionError
from vepo.estimators import (
    SCENARIOS,
    corrupt_nuisances,
    crossfit_mean,
    estimate_all,
    fit_nuisances,
    is1_terms,
    is2_terms,
    psi_coefficients,
)
from vepo.toy import behavior_stationary_states

ALL_TUPLES = tuple(np.array(x) for x in zip(*[(s, a, 0.0, s2) for s in range(2) for a in range(2) for s2 in range(2)]))


def population_mean(mdp, p_inf, per_tuple):
    """Exact expectation over (S, A) ~ p_inf, S' ~ p(.|A, S) with the mean reward (terms are affine in r)."""
    s, a, _, s2 = ALL_TUPLES
    r = mdp.mean_reward[s, a]
    w = p_inf[s, a] * mdp.transition[s, a, s2]
    return float(np.sum(w * per_tuple((s, a, r, s2))))


@pytest.fixture(scope="module")
def setting():
    from vepo import build_toy_mdp, toy_behavior

    mdp = build_toy_mdp()
    behavior = toy_behavior()
    old = kappa_policy(0.8)
    return mdp, behavior, old, oracle_nuisances(mdp, old, behavior)


TARGETS = [np.array([[1.0, 0.0], [1.0, 0.0]]), np.array([[0.3, 0.7], [0.9, 0.1]]), np.eye(2)]


@pytest.mark.parametrize("target", TARGETS)
@pytest.mark.parametrize("scenario", ["origin", "mod1", "mod2", "mod3"])
def test_population_triple_robustness(setting, target, scenario):
    from vepo import StochasticPolicy

    mdp, behavior, old, nuis = setting
    pi = StochasticPolicy(target)
    bad = corrupt_nuisances(nuis, scenario, seed=11)
    got = population_mean(mdp, nuis.ratio.p_hat, lambda o: psi_total(o, pi, bad))
    assert abs(got - exact_eta1(mdp, pi, old)) < 1e-10


def test_population_fails_when_all_corrupted(setting):
    from vepo import StochasticPolicy

    mdp, behavior, old, nuis = setting
    pi = StochasticPolicy(TARGETS[0])
    bad = corrupt_nuisances(nuis, "mod4", seed=11)
    got = population_mean(mdp, nuis.ratio.p_hat, lambda o: psi_total(o, pi, bad))
    assert abs(got - exact_eta1(mdp, pi, old)) > 1e-3


@pytest.mark.parametrize("target", TARGETS)
def test_baselines_unbiased_at_truth(setting, target):
    from vepo import StochasticPolicy

    mdp, behavior, old, nuis = setting
    pi = StochasticPolicy(target)
    truth = exact_eta1(mdp, pi, old)
    assert abs(psi1(pi, nuis) - truth) < 1e-10
    assert abs(population_mean(mdp, nuis.ratio.p_hat, lambda o: is1_terms(o, pi, nuis)) - truth) < 1e-10
    assert abs(population_mean(mdp, nuis.ratio.p_hat, lambda o: is2_terms(o, pi, nuis)) - truth) < 1e-10


def test_augmentations_have_zero_mean_at_truth(setting):
    mdp, behavior, old, nuis = setting
    pi = kappa_policy(0.1)
    assert abs(population_mean(mdp, nuis.ratio.p_hat, lambda o: psi2(o, pi, nuis))) < 1e-10
    assert abs(population_mean(mdp, nuis.ratio.p_hat, lambda o: psi3(o, pi, nuis))) < 1e-10


def test_psi_vanishes_at_old_policy(setting, toy, behavior):
    mdp, _, old, nuis = setting
    data = simulate_dataset(toy, behavior, 5, 10, seed=0)
    for sc in SCENARIOS:
        bad = corrupt_nuisances(nuis, sc, seed=3)
        assert np.max(np.abs(psi_total(data, old, bad))) < 1e-10


def test_scalar_tuple_matches_dataset(setting, toy, behavior):
    _, _, _, nuis = setting
    data = simulate_dataset(toy, behavior, 2, 5, seed=1)
    pi = kappa_policy(0.2)
    vec = psi_total(data, pi, nuis)
    for k in range(len(data)):
        one = psi_total((data.s[k], data.a[k], data.r[k], data.s_next[k]), pi, nuis)
        assert abs(one[0] - vec[k]) < 1e-12


@given(st.integers(0, 2**31 - 1))
def test_coefficients_reproduce_mean(seed):
    from vepo import build_toy_mdp, toy_behavior

    mdp, behavior = build_toy_mdp(), toy_behavior()
    rng = np.random.default_rng(seed)
    data = simulate_dataset(mdp, behavior, 3, 10, seed=seed % 1000)
    nuis = corrupt_nuisances(oracle_nuisances(mdp, kappa_policy(0.6), behavior), "mod4", seed)
    c, const = psi_coefficients(data, nuis)
    pi = random_policy(rng)
    assert abs(np.sum(c * pi.probs) + const - psi_total(data, pi, nuis).mean()) < 1e-10


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_estimate_is_affine_in_mixtures(seed, eps):
    from vepo import build_toy_mdp, toy_behavior

    mdp, behavior = build_toy_mdp(), toy_behavior()
    rng = np.random.default_rng(seed)
    data = simulate_dataset(mdp, behavior, 4, 10, seed=seed % 1000)
    nuis = oracle_nuisances(mdp, kappa_policy(0.6), behavior)
    p, q = random_policy(rng), random_policy(rng)
    folds = make_folds(data, 2, seed)
    est = lambda pi: eta1_crossfit(data, folds, [nuis, nuis], pi)  # noqa: E731
    assert abs(est(p.mix(q, eps)) - ((1 - eps) * est(p) + eps * est(q))) < 1e-10


def test_crossfit_coefficients_match_crossfit_mean(setting, toy, behavior):
    _, _, old, nuis = setting
    data = simulate_dataset(toy, behavior, 7, 10, seed=2)
    folds = make_folds(data, 3, 0)
    nuisances = [corrupt_nuisances(nuis, "mod4", seed=f) for f in range(3)]
    c, const = crossfit_coefficients(data, folds, nuisances)
    pi = kappa_policy(0.35)
    assert abs(np.sum(c * pi.probs) + const - eta1_crossfit(data, folds, nuisances, pi)) < 1e-10


def test_single_fold_is_plain_mean(setting, toy, behavior):
    _, _, _, nuis = setting
    data = simulate_dataset(toy, behavior, 4, 10, seed=3)
    folds = make_folds(data, 1, 0)
    pi = kappa_policy(0.1)
    assert abs(eta1_crossfit(data, folds, [nuis], pi) - psi_total(data, pi, nuis).mean()) < 1e-12
    assert folds.train_data(data, 0) is data


def test_estimate_all_keys(setting, toy, behavior):
    _, _, _, nuis = setting
    data = simulate_dataset(toy, behavior, 4, 10, seed=3)
    out = estimate_all(data, make_folds(data, 2, 0), [nuis, nuis], kappa_policy(0.1))
    assert set(out) == {"triply_robust", "plugin", "is1", "is2"}


def test_fold_count_mismatch(setting, toy, behavior):
    _, _, _, nuis = setting
    data = simulate_dataset(toy, behavior, 4, 10, seed=3)
    with pytest.raises(DimensionError):
        crossfit_mean(data, make_folds(data, 2, 0), [nuis], lambda p, n: np.zeros(len(p)))


@given(st.integers(1, 12), st.integers(0, 1000))
def test_folds_partition_trajectories(L, seed):
    from vepo import build_toy_mdp, toy_behavior

    data = simulate_dataset(build_toy_mdp(), toy_behavior(), 12, 3, seed=0)
    folds = make_folds(data, L, seed)
    sizes = [len(folds.members(f)) for f in range(L)]
    assert sum(sizes) == 12 and max(sizes) - min(sizes) <= 1
    for f in range(L):
        ev, tr = folds.eval_data(data, f), folds.train_data(data, f)
        if L > 1:
            assert len(ev) + len(tr) == len(data)
            assert not set(ev.traj_id) & set(tr.traj_id)
    assert make_folds(data, L, seed).fold_of_traj == folds.fold_of_traj


def test_too_many_folds(toy, behavior):
    data = simulate_dataset(toy, behavior, 3, 3, seed=0)
    with pytest.raises(ValueError):
        make_folds(data, 4, 0)


def test_uncentered_advantage_rejected(setting):
    _, _, old, nuis = setting
    q = QEstimate(nuis.q.q, nuis.q.v, nuis.q.adv + 1.0, old)
    with pytest.raises(ValueError):
        replace(nuis, q=q)


def test_unknown_scenario(setting):
    with pytest.raises(ValueError):
        corrupt_nuisances(setting[3], "mod9", 0)


def test_corruption_deterministic(setting):
    nuis = setting[3]
    a, b = corrupt_nuisances(nuis, "mod4", 5), corrupt_nuisances(nuis, "mod4", 5)
    assert np.array_equal(a.ratio.conditional, b.ratio.conditional)
    assert np.array_equal(a.q.q, b.q.q) and np.array_equal(a.d_nu, b.d_nu)


def test_fit_nuisances_close_to_oracle(toy, behavior):
    data = simulate_dataset(toy, behavior, 50, 50, seed=4, start_dist=behavior_stationary_states(toy))
    old = kappa_policy(0.7)
    cfg = NuisanceConfig(ratio=RatioFitConfig(n_iterations=800))
    fit = fit_nuisances(data, old, toy.gamma, toy.reference_dist, cfg, seed=0)
    truth = oracle_nuisances(toy, old, behavior)
    assert fit.visitation_mode == "pseudo" and fit.d_nu_samples is not None
    assert np.max(np.abs(fit.d_nu - truth.d_nu)) < 0.05
    assert np.max(np.abs(fit.q.q - truth.q.q)) < 1.0
    pi = kappa_policy(1.0)
    est = psi_total(data, pi, fit).mean()
    assert abs(est - exact_eta1(toy, pi, old)) < 0.1
