"""Estimating functions for the first-order value difference and its cross-fitted estimator.

For a tuple o = (s, a, r, s') and nuisances (V, A, omega, d) the estimating
function is psi = psi1 + psi2 + psi3, where psi1 is the plug-in term and
psi2, psi3 are augmentations that protect against errors in (V, A) and d.
Every term is linear (affine) in the target policy, so the cross-fitted mean
is also returned as a coefficient table c[s, a] with eta1(pi) = <c, pi> + const.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError
from .mdp import (
    Dataset,
    StochasticPolicy,
    TabularMDP,
    exact_q,
    exact_ratio,
    exact_visitation,
)
from .q_estimation import QEstimate, RegressorConfig, corrupt_q, fqe
from .ratio import RatioEstimate, RatioFitConfig, corrupt_ratio, fit_ratio_minimax, integrate_ratio
from .transition import (
    PseudoSampleSet,
    TransitionEstimate,
    corrupt_transition,
    default_horizon,
    fit_transition_tabular,
    pseudo_samples_integrated,
)

SCENARIOS = {
    "origin": (),
    "mod1": ("ratio",),
    "mod2": ("q",),
    "mod3": ("transition",),
    "mod4": ("ratio", "q", "transition"),
}


@dataclass(frozen=True)
class NuisanceSet:
    """Nuisance estimates for one fold.

    ``d_cond[s, a, s']`` is the conditional visitation, ``d_nu[s']`` the
    integrated one. With ``visitation_mode="exact"`` both come from the closed
    form under ``transition``; with ``"pseudo"`` the integrated one is the
    weighted pseudo-sample histogram in ``d_nu_samples``.
    """

    pi_old: StochasticPolicy
    q: QEstimate
    ratio: RatioEstimate
    transition: TransitionEstimate
    d_cond: np.ndarray
    d_nu: np.ndarray
    gamma: float
    nu: np.ndarray
    visitation_mode: str = "exact"
    d_nu_samples: PseudoSampleSet | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        resid = np.sum(self.pi_old.probs * self.q.adv, axis=1)
        if np.max(np.abs(resid)) > 1e-10:
            raise ValueError("advantage estimate is not centered under pi_old")


def visitation_from_kernel(transition: TransitionEstimate, pi_old: StochasticPolicy, gamma: float, nu, mode: str,
                           M: int = 1000, T_prime: int | None = None, seed: int = 0):
    """(d_cond, d_nu, samples) under a tabular kernel in the requested mode."""
    d_cond = transition.conditional_visitation(pi_old, gamma)
    if mode == "exact":
        return d_cond, np.einsum("s,sa,sat->t", nu, pi_old.probs, d_cond), None
    if mode != "pseudo":
        raise ValueError(f"unknown visitation mode {mode!r}")
    T_prime = default_horizon(gamma) if T_prime is None else T_prime
    samples = pseudo_samples_integrated(transition, pi_old, nu, M, T_prime, seed, gamma)
    return d_cond, samples.state_distribution(pi_old.n_states), samples


def oracle_nuisances(mdp: TabularMDP, pi_old: StochasticPolicy, behavior: StochasticPolicy) -> NuisanceSet:
    """Exact nuisances for a known MDP."""
    ratio = exact_ratio(mdp, pi_old, behavior)
    vis = exact_visitation(mdp, pi_old)
    return NuisanceSet(
        pi_old=pi_old,
        q=QEstimate.from_q(exact_q(mdp, pi_old), pi_old),
        ratio=RatioEstimate(np.array(ratio.conditional), np.array(ratio.integrated), np.array(ratio.stationary)),
        transition=TransitionEstimate.from_mdp(mdp),
        d_cond=np.array(vis.conditional),
        d_nu=np.array(vis.integrated),
        gamma=mdp.gamma,
        nu=np.array(mdp.reference_dist),
    )


@dataclass(frozen=True)
class NuisanceConfig:
    q: RegressorConfig = RegressorConfig()
    ratio: RatioFitConfig = RatioFitConfig()
    smoothing: float = 0.5
    visitation_mode: str = "pseudo"
    M: int = 1000
    T_prime: int | None = None


def fit_nuisances(train: Dataset, pi_old: StochasticPolicy, gamma: float, nu, cfg: NuisanceConfig,
                  seed: int = 0) -> NuisanceSet:
    """Fit (Q, omega, p, d) on a training fold."""
    nu = np.asarray(nu, dtype=float)
    q = fqe(train, pi_old, gamma, cfg.q)
    ratio = fit_ratio_minimax(train, pi_old, gamma, replace(cfg.ratio, seed=seed), nu=nu)
    trans = fit_transition_tabular(train, cfg.smoothing)
    d_cond, d_nu, samples = visitation_from_kernel(trans, pi_old, gamma, nu, cfg.visitation_mode, cfg.M,
                                                   cfg.T_prime, seed)
    return NuisanceSet(pi_old, q, ratio, trans, d_cond, d_nu, gamma, nu, cfg.visitation_mode, samples,
                       info={"n_train": len(train)})


def corrupt_nuisances(nuis: NuisanceSet, scenario: str, seed: int, M: int = 1000,
                      T_prime: int | None = None) -> NuisanceSet:
    """Apply a named corruption scenario; each corrupted nuisance gets its own derived seed."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {sorted(SCENARIOS)}")
    which = SCENARIOS[scenario]
    s_ratio, s_q, s_p = (int(x.generate_state(1)[0]) for x in np.random.SeedSequence(seed).spawn(3))
    out = nuis
    if "ratio" in which:
        out = replace(out, ratio=corrupt_ratio(out.ratio, s_ratio, out.pi_old, out.nu))
    if "q" in which:
        out = replace(out, q=corrupt_q(out.q, s_q))
    if "transition" in which:
        trans = corrupt_transition(out.transition, s_p)
        d_cond, d_nu, samples = visitation_from_kernel(trans, out.pi_old, out.gamma, out.nu, out.visitation_mode,
                                                       M, T_prime, s_p)
        out = replace(out, transition=trans, d_cond=d_cond, d_nu=d_nu, d_nu_samples=samples)
    return out


# ---------------------------------------------------------------- psi terms

def _unpack(o):
    if isinstance(o, Dataset):
        return o.s, o.a, o.r, o.s_next
    s, a, r, s2 = o
    return np.atleast_1d(s), np.atleast_1d(a), np.atleast_1d(np.asarray(r, dtype=float)), np.atleast_1d(s2)


def _td_error(s, a, r, s2, nuis: NuisanceSet) -> np.ndarray:
    return r + nuis.gamma * nuis.q.v[s2] - nuis.q.v[s] - nuis.q.adv[s, a]


def _psi3_weights(s, a, s2, nuis: NuisanceSet) -> np.ndarray:
    """m_j[x]: gamma E_{a'~pi_old(s'_j)} d(x|a', s'_j) - d(x|a_j, s_j) + (1 - gamma) 1{x = s_j}."""
    g = nuis.gamma
    m = g * np.einsum("jb,jbx->jx", nuis.pi_old.probs[s2], nuis.d_cond[s2]) - nuis.d_cond[s, a]
    m[np.arange(s.shape[0]), s] += 1.0 - g
    return m


def psi1(pi: StochasticPolicy, nuis: NuisanceSet) -> float:
    """Plug-in term E_{S ~ d_nu} sum_a pi(a|S) A(a, S)."""
    return float(nuis.d_nu @ np.sum(pi.probs * nuis.q.adv, axis=1))


def psi2(o, pi: StochasticPolicy, nuis: NuisanceSet) -> np.ndarray:
    s, a, r, s2 = _unpack(o)
    diff = pi.probs - nuis.pi_old.probs
    w = np.einsum("x,xb,xbj->j", nuis.d_nu, diff, nuis.ratio.conditional[:, :, s, a])
    return w * _td_error(s, a, r, s2, nuis) / (1.0 - nuis.gamma)


def psi3(o, pi: StochasticPolicy, nuis: NuisanceSet) -> np.ndarray:
    s, a, _, s2 = _unpack(o)
    g_pi = np.sum(pi.probs * nuis.q.adv, axis=1)
    return nuis.ratio.integrated[s, a] * (_psi3_weights(s, a, s2, nuis) @ g_pi) / (1.0 - nuis.gamma)


def psi_total(o, pi: StochasticPolicy, nuis: NuisanceSet) -> np.ndarray:
    return psi1(pi, nuis) + psi2(o, pi, nuis) + psi3(o, pi, nuis)


def eta1_plugin(pi: StochasticPolicy, nuis: NuisanceSet) -> float:
    return psi1(pi, nuis)


def is1_terms(o, pi: StochasticPolicy, nuis: NuisanceSet) -> np.ndarray:
    s, a, r, _ = _unpack(o)
    diff = pi.probs - nuis.pi_old.probs
    w = np.einsum("x,xb,xbj->j", nuis.d_nu, diff, nuis.ratio.conditional[:, :, s, a])
    return w * r / (1.0 - nuis.gamma)


def is2_terms(o, pi: StochasticPolicy, nuis: NuisanceSet) -> np.ndarray:
    s, a, _, _ = _unpack(o)
    return np.sum(pi.probs[s] * nuis.q.adv[s], axis=1) * nuis.ratio.integrated[s, a]


def eta1_is1(data: Dataset, pi: StochasticPolicy, nuis: NuisanceSet) -> float:
    """Importance-sampling estimator built on the conditional ratio and rewards."""
    return float(np.mean(is1_terms(data, pi, nuis)))


def eta1_is2(data: Dataset, pi: StochasticPolicy, nuis: NuisanceSet) -> float:
    """Importance-sampling estimator built on the integrated ratio and advantages."""
    return float(np.mean(is2_terms(data, pi, nuis)))


def psi_coefficients(data: Dataset, nuis: NuisanceSet) -> tuple[np.ndarray, float]:
    """(c, const) with mean_j psi(o_j; pi) = sum c[s, a] pi(a|s) + const for every pi."""
    s, a, r, s2 = _unpack(data)
    adv = nuis.q.adv
    c1 = nuis.d_nu[:, None] * adv
    delta = _td_error(s, a, r, s2, nuis)
    c2 = nuis.d_nu[:, None] * np.mean(nuis.ratio.conditional[:, :, s, a] * delta, axis=2) / (1.0 - nuis.gamma)
    m = _psi3_weights(s, a, s2, nuis) * nuis.ratio.integrated[s, a][:, None]
    c3 = np.mean(m, axis=0)[:, None] * adv / (1.0 - nuis.gamma)
    const = -float(np.sum(c2 * nuis.pi_old.probs))
    return c1 + c2 + c3, const


# ---------------------------------------------------------------- cross-fitting

@dataclass(frozen=True)
class FoldAssignment:
    L: int
    fold_of_traj: dict

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")

    def members(self, fold: int) -> list:
        return sorted(i for i, f in self.fold_of_traj.items() if f == fold)

    def eval_data(self, data: Dataset, fold: int) -> Dataset:
        return data.subset(self.members(fold))

    def train_data(self, data: Dataset, fold: int) -> Dataset:
        """Complement of the fold; the whole dataset when L = 1."""
        if self.L == 1:
            return data
        return data.subset([i for i, f in self.fold_of_traj.items() if f != fold])


def make_folds(data: Dataset, L: int, seed: int) -> FoldAssignment:
    """Random split of trajectories into L folds whose sizes differ by at most one."""
    ids = data.trajectory_ids
    if L < 1 or L > ids.size:
        raise ValueError(f"need 1 <= L <= {ids.size} trajectories, got L={L}")
    perm = np.random.default_rng(seed).permutation(ids)
    fold_of = {}
    for f, chunk in enumerate(np.array_split(perm, L)):
        for i in chunk:
            fold_of[int(i)] = f
    return FoldAssignment(L, fold_of)


def _check_folds(folds: FoldAssignment, nuisances):
    if len(nuisances) != folds.L:
        raise DimensionError(f"{len(nuisances)} nuisance sets for {folds.L} folds")


def crossfit_mean(data: Dataset, folds: FoldAssignment, nuisances, per_tuple) -> float:
    """(sum_i T_i)^-1 sum_l sum_{i in fold l} sum_t per_tuple(o_it, nuisances[l])."""
    _check_folds(folds, nuisances)
    total = 0.0
    for f, nuis in enumerate(nuisances):
        part = folds.eval_data(data, f)
        if len(part):
            total += float(np.sum(per_tuple(part, nuis)))
    return total / len(data)


def eta1_crossfit(data: Dataset, folds: FoldAssignment, nuisances, pi: StochasticPolicy) -> float:
    return crossfit_mean(data, folds, nuisances, lambda part, n: psi_total(part, pi, n))


def crossfit_coefficients(data: Dataset, folds: FoldAssignment, nuisances) -> tuple[np.ndarray, float]:
    """Fold coefficient tables combined with weights n_l / n."""
    _check_folds(folds, nuisances)
    c = np.zeros(nuisances[0].pi_old.probs.shape)
    const = 0.0
    for f, nuis in enumerate(nuisances):
        part = folds.eval_data(data, f)
        if not len(part):
            continue
        cf, kf = psi_coefficients(part, nuis)
        w = len(part) / len(data)
        c += w * cf
        const += w * kf
    return c, const


ESTIMATORS = {
    "triply_robust": lambda part, pi, n: psi_total(part, pi, n),
    "plugin": lambda part, pi, n: np.full(len(part), psi1(pi, n)),
    "is1": lambda part, pi, n: is1_terms(part, pi, n),
    "is2": lambda part, pi, n: is2_terms(part, pi, n),
}


def estimate_all(data: Dataset, folds: FoldAssignment, nuisances, pi: StochasticPolicy) -> dict:
    return {k: crossfit_mean(data, folds, nuisances, lambda part, n, f=f: f(part, pi, n)) for k, f in ESTIMATORS.items()}
