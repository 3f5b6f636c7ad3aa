"""Finite MDPs, offline datasets and exact linear-algebra oracles.

Array conventions used throughout the package (state axis first, the
conditioning pair before the outcome):

* ``transition[s, a, s2]``   -- p(s2 | a, s)
* ``mean_reward[s, a]``      -- r(s, a)
* ``policy.probs[s, a]``     -- pi(a | s)
* Q, advantage tables        -- ``q[s, a]``
* conditional visitation     -- ``d[s, a, s2]`` = d^pi(s2 | a, s)
* conditional ratio          -- ``omega[s, a, s2, a2]`` = omega^pi(a2, s2; a, s)
* stationary distribution    -- ``p_inf[s, a]``
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, DimensionError, InfiniteDivergenceError

_PROB_TOL = 1e-12


def _frozen(x) -> np.ndarray:
    arr = np.array(x, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TabularMDP:
    transition: np.ndarray
    mean_reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    reference_dist: np.ndarray
    reward_noise_var: float = 0.0

    def __post_init__(self):
        p = _frozen(self.transition)
        r = _frozen(self.mean_reward)
        init = _frozen(self.initial_dist)
        ref = _frozen(self.reference_dist)
        object.__setattr__(self, "transition", p)
        object.__setattr__(self, "mean_reward", r)
        object.__setattr__(self, "initial_dist", init)
        object.__setattr__(self, "reference_dist", ref)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise DimensionError(f"transition must have shape (S, A, S), got {p.shape}")
        n_s, n_a = p.shape[:2]
        if r.shape != (n_s, n_a):
            raise DimensionError(f"mean_reward must have shape {(n_s, n_a)}, got {r.shape}")
        if init.shape != (n_s,) or ref.shape != (n_s,):
            raise DimensionError("initial_dist and reference_dist must be vectors over states")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        if np.max(np.abs(p.sum(axis=2) - 1.0)) > _PROB_TOL:
            raise ValueError("every transition row p(.|a,s) must sum to 1")
        if abs(init.sum() - 1.0) > _PROB_TOL or np.any(init < 0):
            raise ValueError("initial_dist must be a probability vector")
        if abs(ref.sum() - 1.0) > _PROB_TOL or np.any(ref <= 0):
            raise ValueError("reference_dist must be a strictly positive probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.reward_noise_var < 0:
            raise ValueError("reward_noise_var must be nonnegative")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def replace(self, **changes) -> "TabularMDP":
        kwargs = dict(
            transition=self.transition,
            mean_reward=self.mean_reward,
            gamma=self.gamma,
            initial_dist=self.initial_dist,
            reference_dist=self.reference_dist,
            reward_noise_var=self.reward_noise_var,
        )
        kwargs.update(changes)
        return TabularMDP(**kwargs)


@dataclass(frozen=True)
class StochasticPolicy:
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise DimensionError(f"policy table must be 2-d (S, A), got shape {probs.shape}")
        if np.any(probs < 0):
            raise ValueError("policy probabilities must be nonnegative")
        if np.max(np.abs(probs.sum(axis=1) - 1.0)) > _PROB_TOL:
            raise ValueError("each policy row pi(.|s) must sum to 1")

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "StochasticPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "StochasticPolicy":
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def from_unnormalized(cls, table) -> "StochasticPolicy":
        table = np.asarray(table, dtype=float)
        return cls(table / table.sum(axis=1, keepdims=True))

    def mix(self, other: "StochasticPolicy", eps: float) -> "StochasticPolicy":
        """(1 - eps) * self + eps * other."""
        return StochasticPolicy((1.0 - eps) * self.probs + eps * other.probs)

    def floored(self, floor: float) -> "StochasticPolicy":
        return StochasticPolicy.from_unnormalized(np.maximum(self.probs, floor))


def check_policy(mdp: TabularMDP, policy: StochasticPolicy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise DimensionError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states} states, {mdp.n_actions} actions)"
        )


@dataclass(frozen=True)
class Dataset:
    """Offline transitions stored as flat per-tuple arrays.

    Tuple ``k`` is ``(s[k], a[k], r[k], s_next[k])`` observed at time ``t[k]``
    of trajectory ``traj_id[k]``. Tuples are sorted by (traj_id, t).
    """

    traj_id: np.ndarray
    t: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    n_states: int
    n_actions: int

    def __post_init__(self):
        ints = {k: np.array(getattr(self, k), dtype=np.int64) for k in ("traj_id", "t", "s", "a", "s_next")}
        r = np.array(self.r, dtype=float)
        n = r.shape[0]
        for k, v in ints.items():
            if v.shape != (n,):
                raise DimensionError(f"column {k} has shape {v.shape}, expected ({n},)")
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        r.setflags(write=False)
        object.__setattr__(self, "r", r)
        if n and (self.s.max() >= self.n_states or self.s_next.max() >= self.n_states):
            raise DimensionError("state index out of range")
        if n and self.a.max() >= self.n_actions:
            raise DimensionError("action index out of range")

    def __len__(self) -> int:
        return self.r.shape[0]

    @property
    def trajectory_ids(self) -> np.ndarray:
        return np.unique(self.traj_id)

    @property
    def n_traj(self) -> int:
        return self.trajectory_ids.size

    def lengths(self) -> dict[int, int]:
        ids, counts = np.unique(self.traj_id, return_counts=True)
        return dict(zip(ids.tolist(), counts.tolist()))

    def subset(self, traj_ids) -> "Dataset":
        mask = np.isin(self.traj_id, np.asarray(list(traj_ids)))
        return Dataset(
            self.traj_id[mask], self.t[mask], self.s[mask], self.a[mask],
            self.r[mask], self.s_next[mask], self.n_states, self.n_actions,
        )

    def check_chained(self) -> bool:
        """True when every tuple's next state is the following tuple's state."""
        same = self.traj_id[1:] == self.traj_id[:-1]
        return bool(np.all(self.s_next[:-1][same] == self.s[1:][same]))

    def sa_counts(self) -> np.ndarray:
        counts = np.zeros((self.n_states, self.n_actions))
        np.add.at(counts, (self.s, self.a), 1.0)
        return counts

    def empirical_stationary(self) -> np.ndarray:
        """Empirical state-action frequency, ``p_hat[s, a]``."""
        return self.sa_counts() / max(len(self), 1)

    # -- CSV: traj_id, t, s, a, r, s_next
    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["traj_id", "t", "s", "a", "r", "s_next"])
            for row in zip(self.traj_id, self.t, self.s, self.a, self.r, self.s_next):
                w.writerow([int(row[0]), int(row[1]), int(row[2]), int(row[3]), repr(float(row[4])), int(row[5])])

    @classmethod
    def from_csv(cls, path, n_states: int | None = None, n_actions: int | None = None) -> "Dataset":
        cols = {k: [] for k in ("traj_id", "t", "s", "a", "r", "s_next")}
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                for k in cols:
                    cols[k].append(float(row[k]) if k == "r" else int(row[k]))
        s_all = cols["s"] + cols["s_next"]
        n_states = n_states if n_states is not None else (max(s_all) + 1 if s_all else 1)
        n_actions = n_actions if n_actions is not None else (max(cols["a"]) + 1 if cols["a"] else 1)
        order = np.lexsort((np.array(cols["t"]), np.array(cols["traj_id"])))
        return cls(*(np.asarray(cols[k])[order] for k in cols), n_states=n_states, n_actions=n_actions)


@dataclass(frozen=True)
class VisitationDistribution:
    conditional: np.ndarray  # d[s, a, s2]
    integrated: np.ndarray  # d_nu[s2]


@dataclass(frozen=True)
class RatioTensor:
    conditional: np.ndarray  # omega[s, a, s2, a2]
    integrated: np.ndarray  # omega_nu[s2, a2]
    stationary: np.ndarray  # p_inf[s, a]


def sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs`` (rows are distributions)."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def simulate_dataset(
    mdp: TabularMDP,
    behavior: StochasticPolicy,
    n_traj: int,
    horizon: int,
    seed: int,
    start_dist: np.ndarray | None = None,
) -> Dataset:
    """Roll out ``n_traj`` trajectories of ``horizon`` steps under ``behavior``.

    States at t=0 are drawn from ``start_dist`` (default ``mdp.initial_dist``).
    Rewards are ``r(s, a)`` plus Gaussian noise with variance ``mdp.reward_noise_var``.
    """
    check_policy(mdp, behavior)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    rng = np.random.default_rng(seed)
    start = mdp.initial_dist if start_dist is None else np.asarray(start_dist, dtype=float)
    noise_sd = math.sqrt(mdp.reward_noise_var)

    S = np.empty((n_traj, horizon), dtype=np.int64)
    A = np.empty_like(S)
    S2 = np.empty_like(S)
    R = np.empty((n_traj, horizon))
    s = sample_categorical(rng, np.broadcast_to(start, (n_traj, mdp.n_states)))
    for t in range(horizon):
        a = sample_categorical(rng, behavior.probs[s])
        noise = rng.standard_normal(n_traj) * noise_sd if noise_sd > 0 else 0.0
        s_next = sample_categorical(rng, mdp.transition[s, a])
        S[:, t], A[:, t], S2[:, t] = s, a, s_next
        R[:, t] = mdp.mean_reward[s, a] + noise
        s = s_next
    traj = np.repeat(np.arange(n_traj), horizon)
    tt = np.tile(np.arange(horizon), n_traj)
    return Dataset(traj, tt, S.ravel(), A.ravel(), R.ravel(), S2.ravel(), mdp.n_states, mdp.n_actions)


# ---------------------------------------------------------------- oracles

def state_transition_matrix(transition: np.ndarray, policy: StochasticPolicy) -> np.ndarray:
    """P_pi[s, s2] = sum_a pi(a|s) p(s2|a,s)."""
    return np.einsum("sa,sat->st", policy.probs, transition)


def state_action_transition_matrix(transition: np.ndarray, policy: StochasticPolicy) -> np.ndarray:
    """Matrix over flattened (s, a) pairs: M[(s,a), (s2,a2)] = p(s2|a,s) pi(a2|s2)."""
    n_s, n_a = policy.probs.shape
    m = transition[:, :, :, None] * policy.probs[None, None, :, :]
    return m.reshape(n_s * n_a, n_s * n_a)


def exact_q(mdp: TabularMDP, policy: StochasticPolicy) -> np.ndarray:
    """Solve the policy-evaluation Bellman system; returns ``q[s, a]``."""
    check_policy(mdp, policy)
    n = mdp.n_states * mdp.n_actions
    m = state_action_transition_matrix(mdp.transition, policy)
    lhs = np.eye(n) - mdp.gamma * m
    try:
        q = np.linalg.solve(lhs, mdp.mean_reward.ravel())
    except np.linalg.LinAlgError as exc:  # pragma: no cover - gamma < 1 keeps lhs invertible
        raise ConvergenceError(f"Bellman system solve failed: {exc}") from exc
    return q.reshape(mdp.n_states, mdp.n_actions)


def exact_v(mdp: TabularMDP, policy: StochasticPolicy) -> np.ndarray:
    return np.sum(policy.probs * exact_q(mdp, policy), axis=1)


def exact_advantage(mdp: TabularMDP, policy: StochasticPolicy) -> np.ndarray:
    q = exact_q(mdp, policy)
    return q - np.sum(policy.probs * q, axis=1, keepdims=True)


def exact_value(mdp: TabularMDP, policy: StochasticPolicy) -> float:
    """Integrated value sum_s nu(s) V^pi(s)."""
    return float(mdp.reference_dist @ exact_v(mdp, policy))


def discounted_state_visitation(transition: np.ndarray, policy: StochasticPolicy, gamma: float) -> np.ndarray:
    """Conditional discounted visitation ``d[s, a, s2]`` for an arbitrary kernel."""
    n_s, n_a, _ = transition.shape
    p_pi = state_transition_matrix(transition, policy)
    resolvent = np.linalg.inv(np.eye(n_s) - gamma * p_pi)
    d = gamma * np.einsum("sat,tu->sau", transition, resolvent)
    d[np.arange(n_s), :, np.arange(n_s)] += 1.0
    return (1.0 - gamma) * d


def exact_visitation(mdp: TabularMDP, policy: StochasticPolicy, nu: np.ndarray | None = None) -> VisitationDistribution:
    check_policy(mdp, policy)
    d = discounted_state_visitation(mdp.transition, policy, mdp.gamma)
    nu = mdp.reference_dist if nu is None else np.asarray(nu, dtype=float)
    integrated = np.einsum("s,sa,sat->t", nu, policy.probs, d)
    return VisitationDistribution(_frozen(d), _frozen(integrated))


def stationary_state_distribution(p_pi: np.ndarray, tol: float = 1e-12, max_iters: int = 100_000) -> np.ndarray:
    """Stationary vector of a row-stochastic matrix.

    Solved directly as a linear system; power iteration is used as a
    diagnostic when the chain may be reducible or periodic.
    """
    n = p_pi.shape[0]
    lhs = np.vstack([p_pi.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    resid = np.max(np.abs(mu @ p_pi - mu))
    if resid > 1e-9 or np.any(mu < -1e-12):
        raise ConvergenceError(f"no unique stationary distribution (residual {resid:.2e}); chain may be reducible")
    # periodic chains have a stationary vector but power iteration never settles
    x = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        x_new = x @ p_pi
        if np.max(np.abs(x_new - x)) < tol:
            break
        x = x_new
    else:
        raise ConvergenceError("power iteration did not converge; chain may be periodic")
    mu = np.clip(mu, 0.0, None)
    return mu / mu.sum()


def exact_stationary(mdp: TabularMDP, behavior: StochasticPolicy) -> np.ndarray:
    """Stationary distribution of the behavior state-action chain, ``p_inf[s, a]``."""
    check_policy(mdp, behavior)
    mu = stationary_state_distribution(state_transition_matrix(mdp.transition, behavior))
    return behavior.probs * mu[:, None]


def ratio_numerator(d: np.ndarray, policy: StochasticPolicy, gamma: float) -> np.ndarray:
    """Discounted state-action visitation ``n[s, a, s2, a2]`` built from ``d[s, a, s2]``."""
    n_s, n_a, _ = d.shape
    eye_s = np.eye(n_s)
    shifted = d - (1.0 - gamma) * eye_s[:, None, :]
    num = shifted[:, :, :, None] * policy.probs[None, None, :, :]
    idx_s, idx_a = np.meshgrid(np.arange(n_s), np.arange(n_a), indexing="ij")
    num[idx_s, idx_a, idx_s, idx_a] += 1.0 - gamma
    return num


def exact_ratio(mdp: TabularMDP, policy: StochasticPolicy, behavior: StochasticPolicy) -> RatioTensor:
    check_policy(mdp, policy)
    p_inf = exact_stationary(mdp, behavior)
    zero = np.argwhere(p_inf <= 0)
    if zero.size:
        s, a = zero[0]
        raise ZeroDivisionError(f"stationary probability p_inf(a={a}, s={s}) is zero")
    d = discounted_state_visitation(mdp.transition, policy, mdp.gamma)
    omega = ratio_numerator(d, policy, mdp.gamma) / p_inf[None, None, :, :]
    integrated = np.einsum("s,sa,saxy->xy", mdp.reference_dist, policy.probs, omega)
    return RatioTensor(_frozen(omega), _frozen(integrated), _frozen(p_inf))


def exact_eta1(mdp: TabularMDP, pi: StochasticPolicy, pi_old: StochasticPolicy) -> float:
    """First-order value difference sum_{s,a} pi(a|s) A^{pi_old}(a,s) d^{pi_old,nu}(s)."""
    check_policy(mdp, pi)
    adv = exact_advantage(mdp, pi_old)
    d_nu = exact_visitation(mdp, pi_old).integrated
    return float(np.sum(pi.probs * adv * d_nu[:, None]))


def exact_eta2(mdp: TabularMDP, pi: StochasticPolicy, pi_old: StochasticPolicy) -> float:
    """Higher-order remainder (1-gamma)(V(pi) - V(pi_old)) - eta1."""
    diff = (1.0 - mdp.gamma) * (exact_value(mdp, pi) - exact_value(mdp, pi_old))
    return diff - exact_eta1(mdp, pi, pi_old)


def value_iteration(mdp: TabularMDP, tol: float = 1e-12, max_iters: int = 100_000) -> tuple[np.ndarray, StochasticPolicy]:
    """Optimal Q table and greedy policy (ties to the smallest action)."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iters):
        v = q.max(axis=1)
        q_new = mdp.mean_reward + mdp.gamma * mdp.transition @ v
        if np.max(np.abs(q_new - q)) < tol:
            q = q_new
            break
        q = q_new
    else:
        raise ConvergenceError("value iteration did not converge")
    return q, StochasticPolicy.deterministic(np.argmax(q, axis=1), mdp.n_actions)


def eval_horizon(gamma: float, r_max: float, tol: float = 1e-4) -> int:
    """Smallest T with gamma^T * r_max / (1 - gamma) < tol."""
    if gamma == 0 or r_max == 0:
        return 1
    return max(1, int(math.floor(math.log(tol * (1.0 - gamma) / r_max) / math.log(gamma))) + 1)


def monte_carlo_value(
    mdp: TabularMDP,
    policy: StochasticPolicy,
    n_rollouts: int,
    seed: int,
    noisy_rewards: bool = False,
    start_dist: np.ndarray | None = None,
) -> tuple[float, float]:
    """Truncated discounted-return average over rollouts started from nu.

    Mean rewards are accumulated unless ``noisy_rewards`` is set. Returns
    ``(mean, stderr)``.
    """
    check_policy(mdp, policy)
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    rng = np.random.default_rng(seed)
    r_max = float(np.max(np.abs(mdp.mean_reward)))
    horizon = eval_horizon(mdp.gamma, r_max)
    start = mdp.reference_dist if start_dist is None else start_dist
    s = sample_categorical(rng, np.broadcast_to(start, (n_rollouts, mdp.n_states)))
    ret = np.zeros(n_rollouts)
    disc = 1.0
    noise_sd = math.sqrt(mdp.reward_noise_var)
    for _ in range(horizon):
        a = sample_categorical(rng, policy.probs[s])
        r = mdp.mean_reward[s, a]
        if noisy_rewards and noise_sd > 0:
            r = r + noise_sd * rng.standard_normal(n_rollouts)
        ret += disc * r
        disc *= mdp.gamma
        s = sample_categorical(rng, mdp.transition[s, a])
    stderr = float(ret.std(ddof=1) / math.sqrt(n_rollouts)) if n_rollouts > 1 else 0.0
    return float(ret.mean()), stderr


def avg_kl(pi_old: StochasticPolicy, pi: StochasticPolicy, weights) -> float:
    """sum_s w(s) KL(pi_old(.|s) || pi(.|s)) with 0 log(0/x) = 0."""
    return float(np.asarray(weights, dtype=float) @ kl_per_state(pi_old.probs, pi.probs))


def kl_per_state(p_old: np.ndarray, p_new: np.ndarray) -> np.ndarray:
    bad = (p_old > 0) & (p_new <= 0)
    if np.any(bad):
        s, a = np.argwhere(bad)[0]
        raise InfiniteDivergenceError(f"pi(a={a}|s={s}) = 0 while pi_old(a={a}|s={s}) > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p_old > 0, p_old * (np.log(p_old) - np.log(np.where(p_new > 0, p_new, 1.0))), 0.0)
    return np.maximum(terms.sum(axis=1), 0.0)


def tv_per_state(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(p - q).sum(axis=-1)


# ---------------------------------------------------------------- config I/O

def mdp_to_dict(mdp: TabularMDP) -> dict:
    return {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "transition": mdp.transition.tolist(),
        "reward": mdp.mean_reward.tolist(),
        "gamma": mdp.gamma,
        "noise_var": mdp.reward_noise_var,
        "init_dist": mdp.initial_dist.tolist(),
        "ref_dist": mdp.reference_dist.tolist(),
    }


def mdp_from_dict(cfg: dict) -> TabularMDP:
    missing = {"transition", "reward", "gamma"} - cfg.keys()
    if missing:
        raise ValueError(f"MDP config is missing keys: {sorted(missing)}")
    p = np.asarray(cfg["transition"], dtype=float)
    p = p / p.sum(axis=2, keepdims=True)
    n_s = p.shape[0]
    init = cfg.get("init_dist", [1.0 / n_s] * n_s)
    mdp = TabularMDP(
        transition=p,
        mean_reward=np.asarray(cfg["reward"], dtype=float),
        gamma=float(cfg["gamma"]),
        initial_dist=init,
        reference_dist=cfg.get("ref_dist", init),
        reward_noise_var=float(cfg.get("noise_var", 0.0)),
    )
    for key, got in (("n_states", mdp.n_states), ("n_actions", mdp.n_actions)):
        if key in cfg and int(cfg[key]) != got:
            raise DimensionError(f"{key}={cfg[key]} disagrees with transition shape ({got})")
    return mdp


def save_mdp(mdp: TabularMDP, path) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(mdp), indent=2))


def load_mdp(path) -> TabularMDP:
    return mdp_from_dict(json.loads(Path(path).read_text()))


def save_policy(policy: StochasticPolicy, path) -> None:
    Path(path).write_text(json.dumps({"probs": policy.probs.tolist()}, indent=2))


def load_policy(path) -> StochasticPolicy:
    cfg = json.loads(Path(path).read_text())
    return StochasticPolicy(np.asarray(cfg["probs"] if isinstance(cfg, dict) else cfg, dtype=float))
