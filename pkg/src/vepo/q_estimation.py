"""Fitted-Q evaluation and iteration with lookup-table or linear regressors."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError, CoverageError
from .mdp import Dataset, StochasticPolicy


@dataclass(frozen=True)
class QEstimate:
    q: np.ndarray  # q[s, a]
    v: np.ndarray  # v[s] = sum_a pi(a|s) q[s, a]
    adv: np.ndarray  # adv[s, a] = q[s, a] - v[s]
    fitted_for: StochasticPolicy

    @classmethod
    def from_q(cls, q: np.ndarray, policy: StochasticPolicy) -> "QEstimate":
        q = np.asarray(q, dtype=float)
        v = np.sum(policy.probs * q, axis=1)
        return cls(q, v, q - v[:, None], policy)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "a", "q", "adv"])
            for s in range(self.q.shape[0]):
                for a in range(self.q.shape[1]):
                    w.writerow([s, a, repr(float(self.q[s, a])), repr(float(self.adv[s, a]))])

    @classmethod
    def from_csv(cls, path, policy: StochasticPolicy) -> "QEstimate":
        q = np.zeros(policy.probs.shape)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                q[int(row["s"]), int(row["a"])] = float(row["q"])
        return cls.from_q(q, policy)


@dataclass(frozen=True)
class RegressorConfig:
    kind: str = "lookup_table"  # "lookup_table" | "linear_features"
    max_iters: int = 10_000
    tol: float = 1e-10
    feature_map: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    temperature: float = 0.0  # FQI only; > 0 returns softmax(q / temperature)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.kind not in ("lookup_table", "linear_features"):
            raise ValueError(f"unknown regressor kind {self.kind!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def one_hot_features(s: np.ndarray, a: np.ndarray, n_states: int, n_actions: int) -> np.ndarray:
    x = np.zeros((s.shape[0], n_states * n_actions))
    x[np.arange(s.shape[0]), s * n_actions + a] = 1.0
    return x


def _check_coverage(data: Dataset) -> np.ndarray:
    counts = data.sa_counts()
    missing = np.argwhere(counts == 0)
    if missing.size:
        s, a = missing[0]
        raise CoverageError(f"state-action cell (s={s}, a={a}) has no transitions in the fold")
    return counts


class _Regressor:
    """Fits targets on the fold's (s, a) and predicts the full q table."""

    def __init__(self, data: Dataset, cfg: RegressorConfig):
        self.data = data
        self.n_s, self.n_a = data.n_states, data.n_actions
        if cfg.kind == "lookup_table":
            self.counts = _check_coverage(data).ravel()
            self.cells = data.s * self.n_a + data.a
            self.pinv = None
        else:
            fmap = cfg.feature_map or (lambda s, a: one_hot_features(s, a, self.n_s, self.n_a))
            grid_s, grid_a = np.meshgrid(np.arange(self.n_s), np.arange(self.n_a), indexing="ij")
            self.grid_x = fmap(grid_s.ravel(), grid_a.ravel())
            x = fmap(data.s, data.a)
            self.pinv = np.linalg.pinv(x)

    def fit_predict(self, y: np.ndarray) -> np.ndarray:
        if self.pinv is None:
            sums = np.bincount(self.cells, weights=y, minlength=self.n_s * self.n_a)
            return (sums / self.counts).reshape(self.n_s, self.n_a)
        return (self.grid_x @ (self.pinv @ y)).reshape(self.n_s, self.n_a)


def _iterate(data: Dataset, cfg: RegressorConfig, gamma: float, next_value: Callable[[np.ndarray], np.ndarray],
             q0: np.ndarray | None = None, history: list | None = None) -> np.ndarray:
    reg = _Regressor(data, cfg)
    q = np.zeros((data.n_states, data.n_actions)) if q0 is None else np.array(q0, dtype=float)
    for _ in range(cfg.max_iters):
        y = data.r + gamma * next_value(q)[data.s_next]
        q_new = reg.fit_predict(y)
        change = float(np.max(np.abs(q_new - q)))
        if history is not None:
            history.append(change)
        q = q_new
        if not np.isfinite(change):
            raise ConvergenceError("fitted-Q iterates became non-finite")
        if change < cfg.tol:
            return q
    raise ConvergenceError(f"fitted-Q did not converge within {cfg.max_iters} iterations (last change {change:.3g})")


def fqe(data: Dataset, pi_old: StochasticPolicy, gamma: float, cfg: RegressorConfig = RegressorConfig(),
        history: list | None = None) -> QEstimate:
    """Evaluate ``pi_old`` by regressing r + gamma * V_prev(s') on (s, a) until the table stops moving.

    ``history`` (if given) receives the sup-norm change of every iteration.
    """
    q = _iterate(data, cfg, gamma, lambda q: np.sum(pi_old.probs * q, axis=1), history=history)
    return QEstimate.from_q(q, pi_old)


def fqi(data: Dataset, gamma: float, cfg: RegressorConfig = RegressorConfig()) -> tuple[QEstimate, StochasticPolicy]:
    """Optimal-Bellman fitted-Q iteration; greedy (smallest index on ties) or softmax policy."""
    q = _iterate(data, cfg, gamma, lambda q: np.max(q, axis=1))
    if cfg.temperature > 0:
        z = q / cfg.temperature
        z = np.exp(z - z.max(axis=1, keepdims=True))
        policy = StochasticPolicy(z / z.sum(axis=1, keepdims=True))
    else:
        policy = StochasticPolicy.deterministic(np.argmax(q, axis=1), data.n_actions)
    return QEstimate.from_q(q, policy), policy


def empirical_mdp(data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-likelihood kernel ``p_hat[s, a, s']`` and mean reward ``r_bar[s, a]`` (no smoothing)."""
    counts = _check_coverage(data)
    trans = np.zeros((data.n_states, data.n_actions, data.n_states))
    np.add.at(trans, (data.s, data.a, data.s_next), 1.0)
    r_sum = np.zeros((data.n_states, data.n_actions))
    np.add.at(r_sum, (data.s, data.a), data.r)
    return trans / counts[:, :, None], r_sum / counts


def empirical_bellman_q(data: Dataset, pi: StochasticPolicy, gamma: float) -> np.ndarray:
    """Direct solve of the empirical Bellman system; the lookup-table FQE fixed point."""
    p_hat, r_bar = empirical_mdp(data)
    n_s, n_a = r_bar.shape
    m = (p_hat[:, :, :, None] * pi.probs[None, None]).reshape(n_s * n_a, n_s * n_a)
    q = np.linalg.solve(np.eye(n_s * n_a) - gamma * m, r_bar.ravel())
    return q.reshape(n_s, n_a)


def corrupt_q(est: QEstimate, seed: int) -> QEstimate:
    """Add i.i.d. Uniform(0, 2) noise to every q entry, then re-derive v and re-center adv."""
    rng = np.random.default_rng(seed)
    return QEstimate.from_q(est.q + rng.uniform(0.0, 2.0, size=est.q.shape), est.fitted_for)
