import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from o2oil.mdp import (OccupancyMeasure, TabularMdp, TabularPolicy,
                       average_state_action_frequency, bellman_flow_residual,
                       build_gridworld, policy_return, stationary_distribution,
                       value_iteration)

from conftest import random_mdp, random_policy


# ---------------------------------------------------------------------------
# construction & validation
# ---------------------------------------------------------------------------

def test_degenerate_grid_is_single_absorbing_state():
    mdp = build_gridworld(1, 1, goal=(0, 0), slip=0.0, step_penalty=0.0)
    assert mdp.n_states == 1
    assert np.allclose(mdp.transition, 1.0)
    assert mdp.reward[0, 0] == 1.0


def test_two_cell_grid_deterministic_east_move():
    mdp = build_gridworld(2, 1, goal=(1, 0), slip=0.0, step_penalty=0.0)
    east = 1
    assert mdp.transition[0, east, 1] == 1.0


def test_gridworld_rows_are_stochastic():
    mdp = build_gridworld(8, 8, goal=(7, 7), slip=0.1, step_penalty=-0.01)
    sums = mdp.transition.sum(axis=2)
    assert sums.shape == (64, 4)
    assert np.allclose(sums, 1.0, atol=1e-12)
    assert np.all(mdp.transition >= 0)


def test_gridworld_validation_errors():
    with pytest.raises(ValueError):
        build_gridworld(0, 3, goal=(0, 0))
    with pytest.raises(ValueError):
        build_gridworld(3, 3, goal=(5, 0))
    with pytest.raises(ValueError):
        build_gridworld(3, 3, goal=(0, 0), slip=1.0)


def test_mdp_rejects_bad_tensors():
    t = np.ones((2, 1, 2))  # rows sum to 2
    with pytest.raises(ValueError):
        TabularMdp(transition=t, initial=np.array([0.5, 0.5]), discount=0.9)
    with pytest.raises(ValueError):
        TabularMdp(transition=np.ones((1, 1, 1)), initial=np.array([0.9]), discount=0.9)
    with pytest.raises(ValueError):
        TabularMdp(transition=np.ones((1, 1, 1)), initial=np.ones(1), discount=1.5)


def test_mdp_json_round_trip():
    mdp = random_mdp(0, 4, 3, 0.95)
    back = TabularMdp.from_json(mdp.to_json())
    assert np.allclose(back.transition, mdp.transition)
    assert np.allclose(back.initial, mdp.initial)
    assert back.discount == mdp.discount
    assert np.allclose(back.reward, mdp.reward)


# ---------------------------------------------------------------------------
# value iteration
# ---------------------------------------------------------------------------

def test_value_iteration_single_state(one_state_mdp):
    pi = value_iteration(one_state_mdp)
    assert pi.probs[0, 0] == 1.0


def test_value_iteration_two_cell_grid_moves_east():
    mdp = build_gridworld(2, 1, goal=(1, 0), slip=0.0, step_penalty=-0.01)
    pi = value_iteration(mdp)
    east = 1
    assert pi.probs[0, east] == 1.0


def _policy_iteration(mdp, iters=200):
    """Independent planner: policy evaluation by linear solve + greedy step."""
    n, a = mdp.n_states, mdp.n_actions
    actions = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        probs = np.zeros((n, a))
        probs[np.arange(n), actions] = 1.0
        p = np.einsum("sa,sap->sp", probs, mdp.transition)
        r = mdp.reward[np.arange(n), actions]
        v = np.linalg.solve(np.eye(n) - mdp.discount * p, r)
        q = mdp.reward + mdp.discount * mdp.transition @ v
        new_actions = q.argmax(axis=1)
        if np.array_equal(new_actions, actions):
            break
        actions = new_actions
    return TabularPolicy.deterministic(actions, a)


def test_value_iteration_matches_policy_iteration_oracle():
    mdp = build_gridworld(8, 8, goal=(7, 7), slip=0.1, step_penalty=-0.01,
                          discount=0.99)
    vi = value_iteration(mdp)
    pi_oracle = _policy_iteration(mdp)
    assert abs(policy_return(mdp, vi) - policy_return(mdp, pi_oracle)) <= 1e-3


def test_value_iteration_requires_reward():
    mdp = random_mdp(1, with_reward=False)
    with pytest.raises(ValueError):
        value_iteration(mdp)


def test_value_iteration_deterministic_one_hot_rows():
    mdp = random_mdp(5, 4, 3, 0.9)
    pi = value_iteration(mdp)
    assert np.all(np.isin(pi.probs, (0.0, 1.0)))
    assert np.array_equal(pi.probs, value_iteration(mdp).probs)


# ---------------------------------------------------------------------------
# occupancy measures
# ---------------------------------------------------------------------------

def test_stationary_distribution_single_state(one_state_mdp):
    occ = stationary_distribution(one_state_mdp, TabularPolicy(np.ones((1, 1))))
    assert occ.rho[0, 0] == pytest.approx(1.0)


def test_stationary_distribution_two_state_cycle(two_state_cycle):
    occ = stationary_distribution(two_state_cycle, TabularPolicy(np.ones((2, 1))))
    # (1-g) * sum g^{2h} = 1/(1+g) at the start state
    assert occ.rho[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert occ.rho[1, 0] == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_stationary_distribution_matches_truncated_rollout_sum():
    mdp = random_mdp(7, 5, 2, 0.9)
    policy = random_policy(8, 5, 2)
    occ = stationary_distribution(mdp, policy)
    # exact marginal propagation, discount-weighted over a long horizon
    d = mdp.initial.copy()
    acc = np.zeros((5, 2))
    p = np.einsum("sa,sap->sp", policy.probs, mdp.transition)
    for h in range(10_000):
        acc += (1 - mdp.discount) * mdp.discount ** h * d[:, None] * policy.probs
        d = p.T @ d
    assert np.abs(acc - occ.rho).sum() <= 1e-6


def test_stationary_distribution_rejects_undiscounted():
    mdp = random_mdp(2, discount=1.0)
    with pytest.raises(ValueError):
        stationary_distribution(mdp, random_policy(0, 3, 2))


def test_average_frequency_is_chain_stationary():
    mdp = random_mdp(11, 4, 2, 1.0)
    policy = random_policy(12, 4, 2)
    occ = average_state_action_frequency(mdp, policy)
    p = np.einsum("sa,sap->sp", policy.probs, mdp.transition)
    d = occ.state_marginal()
    assert np.allclose(p.T @ d, d, atol=1e-10)
    assert occ.rho.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# flow residuals
# ---------------------------------------------------------------------------

def test_flow_residual_zero_for_computed_occupancy():
    mdp = random_mdp(21, 4, 3, 0.95)
    policy = random_policy(22, 4, 3)
    occ = stationary_distribution(mdp, policy)
    assert np.abs(bellman_flow_residual(mdp, occ)).max() <= 1e-10


def test_flow_residual_hand_value_on_cycle(two_state_cycle):
    rho = np.full((2, 1), 0.5)
    res = bellman_flow_residual(two_state_cycle, rho)
    assert res[0] == pytest.approx(0.25)


def test_flow_residual_matches_naive_loops():
    mdp = random_mdp(31, 4, 2, 0.8)
    rng = np.random.default_rng(32)
    rho = rng.uniform(size=(4, 2))
    fast = bellman_flow_residual(mdp, rho)
    slow = np.zeros(4)
    for s in range(4):
        inflow = sum(mdp.transition[sp, a, s] * rho[sp, a]
                     for sp in range(4) for a in range(2))
        slow[s] = ((1 - mdp.discount) * mdp.initial[s]
                   + mdp.discount * inflow - rho[s].sum())
    assert np.allclose(fast, slow, atol=1e-12)


def test_flow_residual_shape_mismatch():
    mdp = random_mdp(1)
    with pytest.raises(ValueError):
        bellman_flow_residual(mdp, np.zeros((2, 5)))


# ---------------------------------------------------------------------------
# returns
# ---------------------------------------------------------------------------

def test_constant_reward_returns_constant():
    base = random_mdp(41, 3, 2, 0.9)
    mdp = TabularMdp(base.transition, base.initial, base.discount,
                     reward=np.full((3, 2), 0.7))
    assert policy_return(mdp, random_policy(42, 3, 2)) == pytest.approx(0.7)


def test_single_state_unit_reward(one_state_mdp):
    assert policy_return(one_state_mdp, TabularPolicy(np.ones((1, 1)))) == pytest.approx(1.0)


def _monte_carlo_return(mdp, policy, n_episodes, horizon, seed):
    rng = np.random.default_rng(seed)
    s = rng.choice(mdp.n_states, size=n_episodes, p=mdp.initial)
    total = np.zeros(n_episodes)
    for t in range(horizon):
        u = rng.uniform(size=(n_episodes, 1))
        a = np.clip((policy.probs[s].cumsum(axis=1) < u).sum(axis=1), 0,
                    mdp.n_actions - 1)
        total += (1 - mdp.discount) * mdp.discount ** t * mdp.reward[s, a]
        u2 = rng.uniform(size=(n_episodes, 1))
        s = np.clip((mdp.transition[s, a].cumsum(axis=1) < u2).sum(axis=1), 0,
                    mdp.n_states - 1)
    return total.mean()


def test_expert_beats_random_and_matches_monte_carlo():
    mdp = build_gridworld(4, 4, goal=(3, 3), slip=0.1, step_penalty=-0.01,
                          discount=0.95)
    expert = value_iteration(mdp)
    uniform = TabularPolicy.uniform(16, 4)
    r_expert = policy_return(mdp, expert)
    r_random = policy_return(mdp, uniform)
    assert r_expert > r_random
    mc = _monte_carlo_return(mdp, expert, 10_000, 400, seed=5)
    assert mc == pytest.approx(r_expert, abs=5e-3)


def test_policy_return_requires_reward():
    mdp = random_mdp(51, with_reward=False)
    with pytest.raises(ValueError):
        policy_return(mdp, random_policy(0, 3, 2))


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 6), a=st.integers(1, 4),
       gamma=st.floats(0.5, 0.99))
def test_occupancy_sums_to_one_and_satisfies_flow(seed, n, a, gamma):
    mdp = random_mdp(seed, n, a, gamma)
    policy = random_policy(seed + 1, n, a)
    occ = stationary_distribution(mdp, policy)
    assert occ.rho.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.abs(bellman_flow_residual(mdp, occ)).max() <= 1e-10


def test_occupancy_measure_validation():
    with pytest.raises(ValueError):
        OccupancyMeasure(np.full((2, 2), 0.5))  # sums to 2
    with pytest.raises(ValueError):
        TabularPolicy(np.array([[0.5, 0.4]]))
