"""KL trust-region policy step and the iterated value-enhancement loop.

The step maximizes a linear surrogate sum_{s,a} c(s,a) pi(a|s) over tabular
policies subject to an averaged KL(pi_old || pi) budget. For a multiplier lam
the Lagrangian separates over states into

    max_pi  c(s,.) . pi + lam W(s) sum_a pibar(a|s) log pi(a)

(W(s) the averaged state weight, pibar the weight-averaged old policy), which
is solved by damped Newton on the simplex. The outer loop bisects log(lam).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InfeasibleError
from .estimators import (
    FoldAssignment,
    NuisanceConfig,
    NuisanceSet,
    crossfit_coefficients,
    fit_nuisances,
    make_folds,
)
from .mdp import Dataset, StochasticPolicy, kl_per_state


@dataclass(frozen=True)
class TrustRegionProblem:
    coeffs: np.ndarray  # c[s, a]
    pi_old_per_fold: list
    kl_weights_per_fold: list
    delta: float

    def __post_init__(self):
        if not self.delta >= 0:
            raise ValueError("delta must be >= 0")
        if len(self.pi_old_per_fold) != len(self.kl_weights_per_fold) or not self.pi_old_per_fold:
            raise ValueError("need one weight vector per fold policy")
        for w in self.kl_weights_per_fold:
            if abs(float(np.sum(w)) - 1.0) > 1e-8 or np.any(np.asarray(w) < 0):
                raise ValueError("KL weights must be probability vectors")

    @property
    def L(self) -> int:
        return len(self.pi_old_per_fold)

    def state_weight(self) -> np.ndarray:
        """W(s) = L^-1 sum_l w_l(s)."""
        return np.mean(np.stack(self.kl_weights_per_fold), axis=0)

    def averaged_old(self) -> np.ndarray:
        """Per-state weight-averaged old policy (plain average where W(s) = 0)."""
        w = np.stack(self.kl_weights_per_fold)  # (L, S)
        p = np.stack([pi.probs for pi in self.pi_old_per_fold])  # (L, S, A)
        tot = w.sum(axis=0)
        avg = np.einsum("ls,lsa->sa", w, p) / np.where(tot > 0, tot, 1.0)[:, None]
        return np.where((tot > 0)[:, None], avg, p.mean(axis=0))

    def kl(self, pi: StochasticPolicy) -> float:
        return float(np.mean([w @ kl_per_state(po.probs, pi.probs)
                              for po, w in zip(self.pi_old_per_fold, self.kl_weights_per_fold)]))

    def objective(self, pi: StochasticPolicy) -> float:
        return float(np.sum(self.coeffs * pi.probs))


@dataclass(frozen=True)
class TrustRegionResult:
    policy: StochasticPolicy
    lam: float
    kl: float
    objective: float
    n_bisection: int


def _argmax_rows(c: np.ndarray) -> np.ndarray:
    out = np.zeros_like(c)
    out[np.arange(c.shape[0]), np.argmax(c, axis=1)] = 1.0
    return out


def _state_objective(c, k, pbar, p):
    with np.errstate(divide="ignore"):
        logs = np.where(pbar > 0, pbar * np.log(p), 0.0)
    return float(c @ p + k * logs.sum())


def newton_simplex(c: np.ndarray, k: float, pbar: np.ndarray, tol: float = 1e-20, max_iters: int = 200,
                   trace: list | None = None) -> np.ndarray:
    """argmax_p c.p + k sum_a pbar_a log p_a over the simplex, for k > 0.

    Actions outside the support of ``pbar`` only receive mass when their
    coefficient beats the support's multiplier; that case has a closed form.
    ``trace`` (if given) receives the objective after every accepted step.
    """
    supp = pbar > 0
    cs, ps = c[supp], pbar[supp]
    p = ps.copy()
    f = _state_objective(cs, k, ps, p)
    for _ in range(max_iters):
        g = cs + k * ps / p
        h = k * ps / p**2
        nu = np.sum(g / h) / np.sum(1.0 / h)
        step = (g - nu) / h
        decrement = float(np.sum((g - nu) ** 2 / h))  # = g . step, without the cancellation
        if decrement <= tol * max(1.0, abs(f)):
            break
        neg = step < 0
        t = min(1.0, 0.99 * float(np.min(-p[neg] / step[neg]))) if np.any(neg) else 1.0
        slack = 64 * np.finfo(float).eps * max(1.0, abs(f))  # rounding in f near the optimum
        if t == 1.0 and decrement < 1e-8 * max(1.0, abs(f)):
            # quadratic-convergence region: f can no longer rank candidates, take the pure Newton step
            cand = p + step
            cand = cand / cand.sum()
            if np.array_equal(cand, p):
                break
            p, f = cand, _state_objective(cs, k, ps, cand)
            if trace is not None:
                trace.append(f)
            continue
        while True:
            cand = p + t * step
            cand = cand / cand.sum()
            f_new = _state_objective(cs, k, ps, cand)
            if f_new >= f + 0.25 * t * decrement - slack or t < 1e-16:
                break
            t *= 0.5
        if f_new < f - slack or np.array_equal(cand, p):  # no progress left at machine precision
            break
        p, f = cand, f_new
        if trace is not None:
            trace.append(f)
    out = np.zeros_like(c, dtype=float)
    out[supp] = p
    if not np.all(supp):
        off = np.flatnonzero(~supp)
        best = off[np.argmax(c[off])]
        if c[best] > np.max(cs):
            mass = k * ps / (c[best] - cs)
            if mass.sum() < 1.0:
                out[:] = 0.0
                out[supp] = mass
                out[best] = 1.0 - mass.sum()
    return out


def _solve_for_lambda(problem: TrustRegionProblem, lam: float) -> np.ndarray:
    w = problem.state_weight()
    pbar = problem.averaged_old()
    c = problem.coeffs
    out = np.empty_like(c, dtype=float)
    for s in range(c.shape[0]):
        if w[s] <= 0:
            out[s] = _argmax_rows(c[s:s + 1])[0]
        else:
            out[s] = newton_simplex(c[s], lam * w[s], pbar[s])
    return out


def solve_penalized(coeffs, pi_old, weights, penalty: float) -> StochasticPolicy:
    """max c.pi - penalty * averaged KL(pi_old || pi); pi_old/weights may be per-fold lists."""
    if penalty <= 0:
        raise ValueError("penalty must be positive")
    pis = pi_old if isinstance(pi_old, (list, tuple)) else [pi_old]
    ws = weights if isinstance(weights, (list, tuple)) else [weights]
    problem = TrustRegionProblem(np.asarray(coeffs, dtype=float), list(pis), [np.asarray(w, float) for w in ws], 1.0)
    return StochasticPolicy.from_unnormalized(_solve_for_lambda(problem, penalty))


def solve_trust_region(problem: TrustRegionProblem, lam_bracket=(1e-8, 1e6), max_bisection: int = 60,
                       tol: float = 1e-6) -> TrustRegionResult:
    """Maximize the linear surrogate inside the averaged-KL ball by bisection on log(lam).

    The returned policy is always on the feasible side (KL <= delta).
    """
    c = problem.coeffs
    if math.isinf(problem.delta):
        pi = StochasticPolicy(_argmax_rows(c))
        return TrustRegionResult(pi, 0.0, math.inf, problem.objective(pi), 0)
    pbar = StochasticPolicy.from_unnormalized(problem.averaged_old())
    floor_kl = problem.kl(pbar)
    if floor_kl > problem.delta + tol:
        raise InfeasibleError(f"smallest attainable averaged KL is {floor_kl:.3g} > delta={problem.delta:.3g}")
    if problem.delta <= tol:
        return TrustRegionResult(pbar, math.inf, floor_kl, problem.objective(pbar), 0)

    def kl_at(lam):
        pi = StochasticPolicy.from_unnormalized(_solve_for_lambda(problem, lam))
        try:
            return pi, problem.kl(pi)
        except ValueError:
            return pi, math.inf

    lo, hi = math.log(lam_bracket[0]), math.log(lam_bracket[1])
    pi_lo, kl_lo = kl_at(math.exp(lo))
    if kl_lo <= problem.delta:
        return TrustRegionResult(pi_lo, math.exp(lo), kl_lo, problem.objective(pi_lo), 0)
    pi_hi, kl_hi = kl_at(math.exp(hi))
    if kl_hi > problem.delta:
        raise InfeasibleError(f"KL {kl_hi:.3g} still exceeds delta={problem.delta:.3g} at lam={lam_bracket[1]:g}")
    n = 0
    for n in range(1, max_bisection + 1):
        mid = 0.5 * (lo + hi)
        pi_mid, kl_mid = kl_at(math.exp(mid))
        if kl_mid > problem.delta:
            lo = mid
        else:
            hi, pi_hi, kl_hi = mid, pi_mid, kl_mid
        if problem.delta - kl_hi <= tol:
            break
    return TrustRegionResult(pi_hi, math.exp(hi), kl_hi, problem.objective(pi_hi), n)


# ---------------------------------------------------------------- VEPO loop

@dataclass(frozen=True)
class MDPMeta:
    gamma: float
    nu: np.ndarray
    n_states: int
    n_actions: int


@dataclass(frozen=True)
class VepoConfig:
    L: int = 2
    delta: float = 0.1
    n_enhancement_iters: int = 3
    nuisance: NuisanceConfig = NuisanceConfig()
    max_bisection: int = 60
    dual_bisection_tol: float = 1e-6
    policy_floor: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.n_enhancement_iters < 0:
            raise ValueError("n_enhancement_iters must be >= 0")


@dataclass
class IterationInfo:
    iteration: int
    policy: StochasticPolicy
    eta1_hat: float
    kl: float
    lam: float
    fold_info: list = field(default_factory=list)


@dataclass
class VepoResult:
    policy: StochasticPolicy
    initial_policies: list
    iterations: list


NuisanceProvider = Callable[[int, Dataset, StochasticPolicy, int], NuisanceSet]


def kl_weights(nuis: NuisanceSet) -> np.ndarray:
    w = np.asarray(nuis.d_nu, dtype=float)
    return w / w.sum()


def vepo(data: Dataset, meta: MDPMeta, initial_policy_provider: Callable[[Dataset], StochasticPolicy],
         cfg: VepoConfig, nuisance_provider: NuisanceProvider | None = None,
         folds: FoldAssignment | None = None) -> VepoResult:
    """Cross-fitted value enhancement.

    Trajectories are split into L folds; fold l's initial policy and nuisances
    are fitted on the other folds (all data when L = 1). Each iteration solves
    one trust-region step on the cross-fitted surrogate and resets every
    fold's old policy to the new one. ``nuisance_provider(fold, train, pi_old,
    iteration)`` replaces the built-in fitting when given.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    folds = make_folds(data, cfg.L, cfg.seed) if folds is None else folds
    train = [folds.train_data(data, f) for f in range(folds.L)]
    pi_old = [initial_policy_provider(t) for t in train]
    initial = list(pi_old)
    iters = []
    if cfg.n_enhancement_iters == 0:
        return VepoResult(pi_old[0], initial, iters)
    fold_seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(cfg.seed).spawn(folds.L)]
    pi_new = pi_old[0]
    for it in range(1, cfg.n_enhancement_iters + 1):
        nuis = []
        for f in range(folds.L):
            try:
                if nuisance_provider is not None:
                    n = nuisance_provider(f, train[f], pi_old[f], it)
                else:
                    n = fit_nuisances(train[f], pi_old[f], meta.gamma, meta.nu, cfg.nuisance, seed=fold_seeds[f])
            except Exception as exc:
                exc.args = (f"[fold {f}, iteration {it}] {exc.args[0] if exc.args else ''}",) + exc.args[1:]
                raise
            nuis.append(n)
        c, const = crossfit_coefficients(data, folds, nuis)
        problem = TrustRegionProblem(c, list(pi_old), [kl_weights(n) for n in nuis], cfg.delta)
        res = solve_trust_region(problem, max_bisection=cfg.max_bisection, tol=cfg.dual_bisection_tol)
        pi_new = res.policy.floored(cfg.policy_floor) if cfg.policy_floor > 0 else res.policy
        fold_info = [
            {
                "fold": f,
                "centering_residual": float(np.max(np.abs(np.sum(n.pi_old.probs * n.q.adv, axis=1)))),
                "ratio_normalization_residual": (
                    float(np.max(np.abs(n.ratio.normalization_sums() - 1.0))) if n.ratio.p_hat is not None else 0.0
                ),
            }
            for f, n in enumerate(nuis)
        ]
        iters.append(IterationInfo(it, pi_new, float(np.sum(c * pi_new.probs) + const), problem.kl(pi_new),
                                   res.lam, fold_info))
        pi_old = [pi_new] * folds.L
    return VepoResult(pi_new, initial, iters)
