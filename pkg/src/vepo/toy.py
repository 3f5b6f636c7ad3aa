"""The two-state, two-action toy MDP and its kappa-parameterized policies."""
from __future__ import annotations

import numpy as np

from .mdp import StochasticPolicy, TabularMDP, exact_stationary

# p(s'|a, s), indexed [s, a, s']
TOY_TRANSITION = np.array(
    [
        [[0.75, 0.25], [0.40, 0.60]],
        [[0.10, 0.90], [0.85, 0.15]],
    ]
)
TOY_BEHAVIOR = np.array([[0.7, 0.3], [0.2, 0.8]])
TOY_INITIAL = np.array([0.4, 0.6])


def build_toy_mdp(noise_var: float = 2.0, gamma: float = 0.9, reference_dist=None) -> TabularMDP:
    """Reward r(a, s) = 1{a == s}; nu defaults to the initial-state distribution."""
    return TabularMDP(
        transition=TOY_TRANSITION,
        mean_reward=np.eye(2),
        gamma=gamma,
        initial_dist=TOY_INITIAL,
        reference_dist=TOY_INITIAL if reference_dist is None else reference_dist,
        reward_noise_var=noise_var,
    )


def toy_behavior() -> StochasticPolicy:
    return StochasticPolicy(TOY_BEHAVIOR)


def kappa_policy(kappa: float) -> StochasticPolicy:
    """[[kappa, 1 - kappa], [1 - kappa, kappa]]; kappa = 1 plays a = s."""
    if not 0.0 <= kappa <= 1.0:
        raise ValueError(f"kappa must lie in [0, 1], got {kappa}")
    return StochasticPolicy(np.array([[kappa, 1.0 - kappa], [1.0 - kappa, kappa]]))


def behavior_stationary_states(mdp: TabularMDP | None = None) -> np.ndarray:
    """State marginal of the behavior chain's stationary distribution."""
    mdp = build_toy_mdp() if mdp is None else mdp
    return exact_stationary(mdp, toy_behavior()).sum(axis=1)
