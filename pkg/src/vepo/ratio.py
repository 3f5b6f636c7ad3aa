"""Minimax estimation of the conditional discounted stationary ratio.

The ratio is a lookup table ``omega[s, a, s2, a2]`` (anchor pair first) made
positive by a softplus. The adversary ranges over the unit ball of an RKHS on
pairs ``((s2, a2), (s, a))`` with a product kernel, so the inner supremum has
the closed form ``sum_{pairs, pairs'} D``. For the indicator kernel the
quadruple sum collapses to per-cell aggregates and a batch costs O(B + C^3)
for C state-action cells; the RBF path works on batch Gram matrices.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, DivergenceError
from .mdp import Dataset, StochasticPolicy


@dataclass(frozen=True)
class RatioFitConfig:
    kernel: str = "tabular"  # "tabular" | "rbf"
    bandwidth_multiplier: float = 1.0
    step_size: float = 0.05
    batch_size: int = 1024
    n_iterations: int = 3000
    optimizer: str = "adam"  # "adam" | "sgd"
    average_tail: float = 0.5  # fraction of final iterates averaged
    seed: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.kernel not in ("tabular", "rbf"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class RatioEstimate:
    conditional: np.ndarray  # omega[s, a, s2, a2]
    integrated: np.ndarray  # omega_nu[s2, a2]
    p_hat: np.ndarray | None = None  # state-action frequencies used for normalization

    def normalization_sums(self, weights: np.ndarray | None = None) -> np.ndarray:
        w = self.p_hat if weights is None else weights
        return np.einsum("saxy,xy->sa", self.conditional, w)

    def to_csv(self, path) -> None:
        n_s, n_a = self.conditional.shape[:2]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a_prime", "s_prime", "a", "s", "omega"])
            for s in range(n_s):
                for a in range(n_a):
                    for s2 in range(n_s):
                        for a2 in range(n_a):
                            w.writerow([a2, s2, a, s, repr(float(self.conditional[s, a, s2, a2]))])

    @classmethod
    def from_csv(cls, path, pi_old: StochasticPolicy, nu) -> "RatioEstimate":
        rows = list(csv.DictReader(open(path, newline="")))
        n_s = max(int(r["s"]) for r in rows) + 1
        n_a = max(int(r["a"]) for r in rows) + 1
        omega = np.zeros((n_s, n_a, n_s, n_a))
        for r in rows:
            omega[int(r["s"]), int(r["a"]), int(r["s_prime"]), int(r["a_prime"])] = float(r["omega"])
        return cls(omega, integrate_ratio(omega, pi_old, nu))


def integrate_ratio(omega: np.ndarray, pi_old: StochasticPolicy, nu) -> np.ndarray:
    """omega_nu(a2, s2) = sum_{a,s} pi_old(a|s) nu(s) omega(a2, s2; a, s)."""
    return np.einsum("s,sa,saxy->xy", np.asarray(nu, dtype=float), pi_old.probs, omega)


def delta_residual(omega, f, pi: StochasticPolicy, gamma: float, transition, anchor) -> np.ndarray:
    """Estimating-equation residual for one (or many) independent tuple pairs.

    ``transition`` is ``(s2, a2, s2_next)`` and ``anchor`` is ``(s, a)``; each
    entry may be an array. ``omega`` and ``f`` are tables indexed
    ``[s, a, s2, a2]`` (anchor pair first).
    """
    s2, a2, s2n = (np.asarray(x) for x in transition)
    s, a = (np.asarray(x) for x in anchor)
    w = omega[s, a, s2, a2]
    f_next = np.einsum("...b,...b->...", pi.probs[s2n], f[s, a, s2n, :])
    return w * (gamma * f_next - f[s, a, s2, a2]) + (1.0 - gamma) * f[s, a, s, a]


# ---------------------------------------------------------------- objective

def _cell_features(data_s, data_a, data_sn, pi: StochasticPolicy, gamma: float) -> np.ndarray:
    """phi_k = gamma * sum_a pi(a|s_next) e_(s_next, a) - e_(s, a), over flat cells."""
    n_s, n_a = pi.probs.shape
    n = data_s.shape[0]
    phi = np.zeros((n, n_s * n_a))
    phi[np.arange(n)[:, None], data_sn[:, None] * n_a + np.arange(n_a)[None, :]] += gamma * pi.probs[data_sn]
    phi[np.arange(n), data_s * n_a + data_a] -= 1.0
    return phi


def tabular_objective(cells: np.ndarray, phi: np.ndarray, omega_t: np.ndarray, gamma: float, n_cells: int,
                      grad: bool = True):
    """Indicator-kernel loss on one batch and its gradient w.r.t. ``omega_t``.

    ``omega_t[x, y]`` is the (normalized) ratio of target cell y given anchor
    cell x. Pairs with identical indices are excluded; the sum over ordered
    pairs-of-pairs is divided by (B (B-1))^2.
    """
    b = cells.shape[0]
    counts = np.bincount(cells, minlength=n_cells).astype(float)
    psi = np.zeros((n_cells, n_cells))
    np.add.at(psi, cells, phi)
    # g[x] = n_x sum_y w(y;x) psi[y] - w(x;x) psi[x] + (1-gamma)(B-1) n_x e_x
    g = counts[:, None] * (omega_t @ psi)
    g -= np.diag(omega_t)[:, None] * psi
    g[np.arange(n_cells), np.arange(n_cells)] += (1.0 - gamma) * (b - 1) * counts
    scale = 1.0 / (b * (b - 1)) ** 2
    loss = scale * float(np.sum(g * g))
    if not grad:
        return loss, None
    d = 2.0 * scale * counts[:, None] * (g @ psi.T)
    d[np.arange(n_cells), np.arange(n_cells)] -= 2.0 * scale * np.sum(g * psi, axis=1)
    return loss, d


def _embed(s, a, n_s, n_a) -> np.ndarray:
    e = np.zeros((s.shape[0], n_s + n_a))
    e[np.arange(s.shape[0]), s] = 1.0
    e[np.arange(s.shape[0]), n_s + a] = 1.0
    return e


def _rbf(x, y, h):
    d2 = np.sum(x * x, 1)[:, None] + np.sum(y * y, 1)[None, :] - 2.0 * x @ y.T
    return np.exp(-np.maximum(d2, 0.0) / (2.0 * h * h))


def median_bandwidth(emb: np.ndarray, multiplier: float = 1.0) -> float:
    d = np.sqrt(np.maximum(np.sum((emb[:, None, :] - emb[None, :, :]) ** 2, -1), 0.0))
    off = d[np.triu_indices(emb.shape[0], 1)]
    off = off[off > 0]
    return multiplier * (float(np.median(off)) if off.size else 1.0)


def kernel_objective(s, a, sn, pi: StochasticPolicy, omega_t: np.ndarray, gamma: float, kernel: str = "rbf",
                     bandwidth: float | None = None, grad: bool = True):
    """Generic product-kernel loss on a batch via Gram matrices.

    ``kernel`` is ``"rbf"`` or ``"indicator"``; returns the loss and the
    gradient w.r.t. ``omega_t[x, y]`` (flat cells).
    """
    n_s, n_a = pi.probs.shape
    b = s.shape[0]
    cells = s * n_a + a
    next_cells = (sn[:, None] * n_a + np.arange(n_a)[None, :]).ravel()
    point_cells = np.concatenate([cells, next_cells])
    if kernel == "indicator":
        k_pts = (point_cells[:, None] == point_cells[None, :]).astype(float)
        k_anc = (cells[:, None] == cells[None, :]).astype(float)
    else:
        pts_s = point_cells // n_a
        pts_a = point_cells % n_a
        emb = _embed(pts_s, pts_a, n_s, n_a)
        h = bandwidth if bandwidth is not None else median_bandwidth(emb)
        k_pts = _rbf(emb, emb, h)
        k_anc = k_pts[:b, :b]
    w = omega_t[cells[:, None], cells[None, :]]  # w[j, k] = omega(X_k; X_j)
    np.fill_diagonal(w, 0.0)
    u = np.zeros((b, b + b * n_a))
    u[:, :b] = -w
    u[:, b:] = gamma * (w[:, :, None] * pi.probs[sn][None, :, :]).reshape(b, b * n_a)
    u[np.arange(b), np.arange(b)] += (1.0 - gamma) * (b - 1)
    m = u @ k_pts
    scale = 1.0 / (b * (b - 1)) ** 2
    loss = scale * float(np.sum(k_anc * (m @ u.T)))
    if not grad:
        return loss, None
    gu = 2.0 * scale * (k_anc @ m)
    gw = -gu[:, :b] + gamma * np.einsum("jka,ka->jk", gu[:, b:].reshape(b, b, n_a), pi.probs[sn])
    np.fill_diagonal(gw, 0.0)
    n_cells = n_s * n_a
    d = np.zeros((n_cells, n_cells))
    np.add.at(d, (cells[:, None].repeat(b, 1), cells[None, :].repeat(b, 0)), gw)
    return loss, d


def minimax_objective(data: Dataset, omega: np.ndarray, pi: StochasticPolicy, gamma: float) -> float:
    """Indicator-kernel objective of a ratio table over all tuples of ``data``."""
    n_s, n_a = data.n_states, data.n_actions
    cells = data.s * n_a + data.a
    phi = _cell_features(data.s, data.a, data.s_next, pi, gamma)
    loss, _ = tabular_objective(cells, phi, omega.reshape(n_s * n_a, n_s * n_a), gamma, n_s * n_a, grad=False)
    return loss


# ---------------------------------------------------------------- fitting

def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def fit_ratio_minimax(data: Dataset, pi_old: StochasticPolicy, gamma: float, cfg: RatioFitConfig,
                      nu=None) -> RatioEstimate:
    """Fit the ratio table by stochastic gradient steps on the minimax loss.

    Each step draws a batch of tuples without replacement, normalizes the
    table by ``z(x) = sum_y p_hat(y) omega(y; x)`` and descends the closed
    form kernel loss. The averaged tail iterate is normalized once more so
    that every anchor slice integrates to one against ``p_hat``.
    """
    n_s, n_a = data.n_states, data.n_actions
    n_cells = n_s * n_a
    n = len(data)
    if n < 2:
        raise ValueError("need at least 2 transitions to fit a ratio")
    p_hat = data.empirical_stationary()
    if cfg.kernel == "tabular" and np.any(p_hat == 0):
        s, a = np.argwhere(p_hat == 0)[0]
        raise CoverageError(f"state-action cell (s={s}, a={a}) never visited; tabular ratio undefined")
    q = p_hat.ravel()
    rng = np.random.default_rng(cfg.seed)
    phi_all = _cell_features(data.s, data.a, data.s_next, pi_old, gamma)
    cells_all = data.s * n_a + data.a
    batch = min(cfg.batch_size, n)

    theta = np.full((n_cells, n_cells), math.log(math.e - 1.0))
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    tail_start = int(cfg.n_iterations * (1.0 - cfg.average_tail))
    avg = np.zeros_like(theta)
    n_avg = 0
    for it in range(cfg.n_iterations):
        idx = rng.choice(n, size=batch, replace=False) if batch < n else np.arange(n)
        omega = _softplus(theta)
        z = omega @ q
        omega_t = omega / z[:, None]
        if cfg.kernel == "tabular":
            loss, g_t = tabular_objective(cells_all[idx], phi_all[idx], omega_t, gamma, n_cells)
        else:
            loss, g_t = kernel_objective(data.s[idx], data.a[idx], data.s_next[idx], pi_old, omega_t, gamma,
                                         kernel="rbf", bandwidth=None)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite minimax loss at iteration {it}; try a smaller step_size")
        # chain rule through omega_t = omega / z and omega = softplus(theta)
        g = g_t / z[:, None] - np.outer(np.sum(g_t * omega, axis=1) / z**2, q)
        g *= _sigmoid(theta)
        if cfg.optimizer == "adam":
            m1 = 0.9 * m1 + 0.1 * g
            m2 = 0.999 * m2 + 0.001 * g * g
            step = cfg.step_size * (m1 / (1 - 0.9 ** (it + 1))) / (np.sqrt(m2 / (1 - 0.999 ** (it + 1))) + 1e-12)
        else:
            step = cfg.step_size * g
        theta = theta - step
        if not np.all(np.isfinite(theta)):
            raise DivergenceError(f"parameters diverged at iteration {it}; try a smaller step_size")
        if it >= tail_start:
            avg += omega_t
            n_avg += 1
    omega = avg / max(n_avg, 1) if n_avg else _softplus(theta) / (_softplus(theta) @ q)[:, None]
    omega = omega / (omega @ q)[:, None]
    conditional = omega.reshape(n_s, n_a, n_s, n_a)
    nu = np.full(n_s, 1.0 / n_s) if nu is None else nu
    return RatioEstimate(conditional, integrate_ratio(conditional, pi_old, nu), p_hat)


def empirical_model_ratio(data: Dataset, pi_old: StochasticPolicy, gamma: float, nu=None) -> RatioEstimate:
    """Closed-form minimizer of the indicator-kernel loss (empirical MLE model).

    Used as a reference solution in tests; the minimax fit converges to it.
    """
    from .mdp import discounted_state_visitation, ratio_numerator

    n_s, n_a = data.n_states, data.n_actions
    counts = np.zeros((n_s, n_a, n_s))
    np.add.at(counts, (data.s, data.a, data.s_next), 1.0)
    tot = counts.sum(axis=2, keepdims=True)
    if np.any(tot == 0):
        raise CoverageError("every state-action cell must be visited")
    p_hat_kernel = counts / tot
    p_hat = data.empirical_stationary()
    d = discounted_state_visitation(p_hat_kernel, pi_old, gamma)
    omega = ratio_numerator(d, pi_old, gamma) / p_hat[None, None]
    nu = np.full(n_s, 1.0 / n_s) if nu is None else nu
    return RatioEstimate(omega, integrate_ratio(omega, pi_old, nu), p_hat)


def corrupt_ratio(est: RatioEstimate, seed: int, pi_old: StochasticPolicy, nu) -> RatioEstimate:
    """Add i.i.d. Uniform(0, 2) noise to every conditional entry (no renormalization)."""
    rng = np.random.default_rng(seed)
    omega = est.conditional + rng.uniform(0.0, 2.0, size=est.conditional.shape)
    return RatioEstimate(omega, integrate_ratio(omega, pi_old, nu), est.p_hat)
