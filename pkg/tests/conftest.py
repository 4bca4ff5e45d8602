import numpy as np
import pytest

from o2oil.mdp import TabularMdp, TabularPolicy


def random_mdp(seed: int, n_states: int = 3, n_actions: int = 2,
               discount: float = 0.9, with_reward: bool = True) -> TabularMdp:
    rng = np.random.default_rng(seed)
    t = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    mu = rng.dirichlet(np.ones(n_states))
    r = rng.uniform(0, 1, size=(n_states, n_actions)) if with_reward else None
    return TabularMdp(transition=t, initial=mu, discount=discount, reward=r)


def random_policy(seed: int, n_states: int, n_actions: int) -> TabularPolicy:
    rng = np.random.default_rng(seed)
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))


@pytest.fixture
def two_state_cycle() -> TabularMdp:
    """Deterministic s0 -> s1 -> s0 with a single action, start at s0."""
    t = np.zeros((2, 1, 2))
    t[0, 0, 1] = 1.0
    t[1, 0, 0] = 1.0
    return TabularMdp(transition=t, initial=np.array([1.0, 0.0]), discount=0.5)


@pytest.fixture
def one_state_mdp() -> TabularMdp:
    return TabularMdp(transition=np.ones((1, 1, 1)), initial=np.ones(1),
                      discount=0.9, reward=np.ones((1, 1)))
