import numpy as np

from vepo.mdp import StochasticPolicy, TabularMDP


def random_policy(rng, n_states=2, n_actions=2, floor=0.0) -> StochasticPolicy:
    p = rng.dirichlet(np.ones(n_actions), size=n_states) + floor
    return StochasticPolicy(p / p.sum(axis=1, keepdims=True))


def random_mdp(rng, n_states=3, n_actions=2, gamma=0.8):
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    init = rng.dirichlet(np.ones(n_states))
    return TabularMDP(transition=p, mean_reward=rng.random((n_states, n_actions)), gamma=gamma,
                      initial_dist=init, reference_dist=init, reward_noise_var=0.0)
