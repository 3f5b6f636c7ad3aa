"""Transition-kernel estimation and pseudo-sample rollouts for visitation expectations.

The tabular model is a smoothed count estimate. The Gaussian model is a small
linear-Gaussian regression for continuous states, kept for completeness.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .mdp import Dataset, StochasticPolicy, TabularMDP, discounted_state_visitation, sample_categorical


@dataclass(frozen=True)
class GaussianKernel:
    """S' | (a, s) ~ N(mean_coef[a] @ [1, s], Sigma(a, s)) with Sigma linear in [1, s]."""

    mean_coef: np.ndarray  # (n_actions, 1 + d, d)
    cov_coef: np.ndarray  # (n_actions, 1 + d, d, d)
    floor: float = 1e-6

    def mean(self, a: int, s: np.ndarray) -> np.ndarray:
        return np.concatenate([[1.0], s]) @ self.mean_coef[a]

    def cov(self, a: int, s: np.ndarray) -> np.ndarray:
        raw = np.tensordot(np.concatenate([[1.0], s]), self.cov_coef[a], axes=1)
        return nearest_pd(raw, self.floor)


@dataclass(frozen=True)
class TransitionEstimate:
    kind: str  # "tabular" | "gaussian"
    p: np.ndarray | None = None  # p[s, a, s']
    gaussian: GaussianKernel | None = None

    def __post_init__(self):
        if self.kind == "tabular":
            if self.p is None or self.p.ndim != 3:
                raise DimensionError("tabular transition estimate needs a 3-d table p[s, a, s']")
            if np.max(np.abs(self.p.sum(axis=2) - 1.0)) > 1e-12:
                raise ValueError("transition rows must sum to 1")
        elif self.kind == "gaussian":
            if self.gaussian is None:
                raise ValueError("gaussian transition estimate needs a GaussianKernel")
        else:
            raise ValueError(f"unknown transition kind {self.kind!r}")

    @property
    def n_states(self) -> int:
        return self.p.shape[0]

    def conditional_visitation(self, pi_old: StochasticPolicy, gamma: float) -> np.ndarray:
        """Closed-form d[s, a, s'] under the estimated kernel (tabular only)."""
        self._need_tabular()
        return discounted_state_visitation(self.p, pi_old, gamma)

    def to_mdp(self, template: TabularMDP) -> TabularMDP:
        self._need_tabular()
        return template.replace(transition=self.p)

    @classmethod
    def from_mdp(cls, mdp: TabularMDP) -> "TransitionEstimate":
        return cls("tabular", p=np.array(mdp.transition))

    def _need_tabular(self):
        if self.kind != "tabular":
            raise TypeError("operation requires a tabular transition estimate")


def fit_transition_tabular(data: Dataset, smoothing: float = 0.5) -> TransitionEstimate:
    """p_hat(s'|a, s) = (count(s, a, s') + smoothing) / (count(s, a) + smoothing * n_states)."""
    if len(data) == 0:
        raise ValueError("cannot fit a transition model on an empty fold")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    counts = np.zeros((data.n_states, data.n_actions, data.n_states))
    np.add.at(counts, (data.s, data.a, data.s_next), 1.0)
    counts += smoothing
    tot = counts.sum(axis=2, keepdims=True)
    if np.any(tot == 0):
        raise ValueError("zero smoothing with an unvisited cell leaves a row undefined")
    return TransitionEstimate("tabular", p=counts / tot)


def nearest_pd(m: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    sym = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(sym)
    return (v * np.maximum(w, floor)) @ v.T


def _lstsq(x, y):
    rank = np.linalg.matrix_rank(x)
    if rank < x.shape[1]:
        warnings.warn(f"rank-deficient design ({rank} < {x.shape[1]}); using ridge 1e-8", RuntimeWarning)
        return np.linalg.solve(x.T @ x + 1e-8 * np.eye(x.shape[1]), x.T @ y)
    return np.linalg.lstsq(x, y, rcond=None)[0]


def fit_transition_gaussian(states: np.ndarray, actions: np.ndarray, next_states: np.ndarray, n_actions: int,
                            floor: float = 1e-6) -> TransitionEstimate:
    """Per-action least squares for the mean and for residual products (the covariance)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    next_states = np.atleast_2d(np.asarray(next_states, dtype=float))
    if states.shape[0] != next_states.shape[0]:
        states, next_states = states.T, next_states.T
    n, d = states.shape
    actions = np.asarray(actions, dtype=int)
    mean_coef = np.zeros((n_actions, 1 + d, d))
    cov_coef = np.zeros((n_actions, 1 + d, d, d))
    for a in range(n_actions):
        mask = actions == a
        if not np.any(mask):
            raise DimensionError(f"no transitions observed for action {a}")
        x = np.hstack([np.ones((mask.sum(), 1)), states[mask]])
        mean_coef[a] = _lstsq(x, next_states[mask])
        resid = next_states[mask] - x @ mean_coef[a]
        prods = (resid[:, :, None] * resid[:, None, :]).reshape(-1, d * d)
        cov_coef[a] = _lstsq(x, prods).reshape(1 + d, d, d)
    return TransitionEstimate("gaussian", gaussian=GaussianKernel(mean_coef, cov_coef, floor))


def default_horizon(gamma: float, tol: float = 1e-3) -> int:
    """ceil(log(tol) / log(gamma)); the geometric tail beyond it is below ``tol``."""
    if gamma <= 0:
        return 0
    return int(math.ceil(math.log(tol) / math.log(gamma)))


@dataclass(frozen=True)
class PseudoSampleSet:
    samples: np.ndarray  # (M, T' + 1) states; (M, T' + 1, d) for continuous states
    gamma: float

    def __post_init__(self):
        if self.samples.ndim < 2 or self.samples.shape[0] < 1:
            raise ValueError("need at least one chain")

    @property
    def n_chains(self) -> int:
        return self.samples.shape[0]

    @property
    def horizon(self) -> int:
        return self.samples.shape[1] - 1

    def weights(self) -> np.ndarray:
        return (1.0 - self.gamma) * self.gamma ** np.arange(self.horizon + 1)

    def state_distribution(self, n_states: int) -> np.ndarray:
        """Weighted state histogram; total mass is 1 - gamma^(T'+1)."""
        w = np.broadcast_to(self.weights(), self.samples.shape)
        return np.bincount(self.samples.ravel(), weights=w.ravel(), minlength=n_states) / self.n_chains

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain_id", "t", "state"])
            for m in range(self.n_chains):
                for t in range(self.horizon + 1):
                    w.writerow([m, t, int(self.samples[m, t])])

    @classmethod
    def from_csv(cls, path, gamma: float) -> "PseudoSampleSet":
        rows = [(int(r["chain_id"]), int(r["t"]), int(r["state"])) for r in csv.DictReader(open(path, newline=""))]
        m = max(r[0] for r in rows) + 1
        t = max(r[1] for r in rows) + 1
        out = np.zeros((m, t), dtype=np.int64)
        for c, tt, s in rows:
            out[c, tt] = s
        return cls(out, gamma)


def _roll(model: TransitionEstimate, pi_old: StochasticPolicy, s0, a0, M: int, T_prime: int, rng) -> np.ndarray:
    if model.kind == "tabular":
        out = np.empty((M, T_prime + 1), dtype=np.int64)
        s, a = s0, a0
        out[:, 0] = s
        for t in range(1, T_prime + 1):
            s = sample_categorical(rng, model.p[s, a])
            out[:, t] = s
            a = sample_categorical(rng, pi_old.probs[s])
        return out
    if not callable(pi_old):
        raise TypeError("continuous-state rollouts need pi_old as a callable state -> action probabilities")
    g = model.gaussian
    s = np.atleast_2d(np.asarray(s0, dtype=float))
    s = np.broadcast_to(s, (M, s.shape[-1])).copy()
    out = np.empty((M, T_prime + 1, s.shape[1]))
    out[:, 0] = s
    a = np.broadcast_to(np.asarray(a0), (M,))
    for t in range(1, T_prime + 1):
        for m in range(M):
            s[m] = rng.multivariate_normal(g.mean(a[m], s[m]), g.cov(a[m], s[m]))
        out[:, t] = s
        a = np.array([rng.choice(len(probs), p=probs) for probs in (pi_old(x) for x in s)])
    return out


def pseudo_samples_conditional(model: TransitionEstimate, pi_old, a: int, s, M: int,
                               T_prime: int, seed: int, gamma: float) -> PseudoSampleSet:
    """Chains start at (s, a), then follow the estimated kernel and pi_old.

    For a Gaussian model ``s`` is a state vector and ``pi_old`` a callable
    mapping a state vector to action probabilities.
    """
    if M < 1 or T_prime < 0:
        raise ValueError("need M >= 1 and T_prime >= 0")
    rng = np.random.default_rng(seed)
    if model.kind == "tabular":
        s0 = np.full(M, int(s), dtype=np.int64)
        a0 = np.full(M, int(a), dtype=np.int64)
    else:
        s0, a0 = s, np.full(M, int(a))
    return PseudoSampleSet(_roll(model, pi_old, s0, a0, M, T_prime, rng), gamma)


def pseudo_samples_integrated(model: TransitionEstimate, pi_old: StochasticPolicy, nu, M: int, T_prime: int,
                              seed: int, gamma: float) -> PseudoSampleSet:
    """Chains start at S0 ~ nu with A0 ~ pi_old(. | S0) drawn before the first transition."""
    if M < 1 or T_prime < 0:
        raise ValueError("need M >= 1 and T_prime >= 0")
    model._need_tabular()
    rng = np.random.default_rng(seed)
    s0 = sample_categorical(rng, np.broadcast_to(np.asarray(nu, dtype=float), (M, model.n_states)))
    a0 = sample_categorical(rng, pi_old.probs[s0])
    return PseudoSampleSet(_roll(model, pi_old, s0, a0, M, T_prime, rng), gamma)


def approx_visitation_expectation(samples: PseudoSampleSet, f) -> float:
    """(1 - gamma) / M * sum_m sum_t gamma^t f(S_t^m).

    ``f`` is a callable on an array of states or a table indexed by state.
    """
    vals = f(samples.samples) if callable(f) else np.asarray(f)[samples.samples]
    vals = np.asarray(vals, dtype=float)
    return float(np.sum(vals.mean(axis=0) * samples.weights()))


def conditional_visitation_from_samples(model: TransitionEstimate, pi_old: StochasticPolicy, gamma: float, M: int,
                                        T_prime: int, seed: int) -> np.ndarray:
    """Pseudo-sample estimate of d[s, a, s'] for every anchor; one derived seed per anchor."""
    n_s, n_a = pi_old.probs.shape
    d = np.zeros((n_s, n_a, n_s))
    seeds = np.random.SeedSequence(seed).spawn(n_s * n_a)
    for s in range(n_s):
        for a in range(n_a):
            ss = int(seeds[s * n_a + a].generate_state(1)[0])
            d[s, a] = pseudo_samples_conditional(model, pi_old, a, s, M, T_prime, ss, gamma).state_distribution(n_s)
    return d


def corrupt_transition(model: TransitionEstimate, seed: int) -> TransitionEstimate:
    """Multiply entries by Exp(1) draws, clip to [0, 1], renormalize rows (uniform if a row vanishes)."""
    model._need_tabular()
    rng = np.random.default_rng(seed)
    p = np.clip(model.p * rng.exponential(1.0, size=model.p.shape), 0.0, 1.0)
    tot = p.sum(axis=2, keepdims=True)
    dead = tot[..., 0] == 0
    if np.any(dead):
        warnings.warn(f"{int(dead.sum())} corrupted transition rows were all zero; using uniform rows", RuntimeWarning)
        p[dead] = 1.0
        tot = p.sum(axis=2, keepdims=True)
    return TransitionEstimate("tabular", p=p / tot)
