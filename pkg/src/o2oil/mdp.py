"""Exact tabular MDP machinery.

Finite state/action MDPs with dense transition tensors, plus the handful of
exact computations everything downstream leans on: optimal policies via value
iteration, discounted occupancy measures by direct linear solve, Bellman-flow
residuals, and expected returns under the normalized occupancy.

All types are immutable after construction and all operations are pure
functions, so independent MDP instances can be processed in parallel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

_ATOL_STOCHASTIC = 1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP: transition[s, a, s'] row-stochastic over s', initial over s.

    `discount` lies in (0, 1]; exactly 1 selects average-reward (undiscounted)
    semantics, which only some operations support. `reward` is optional and
    only needed by planners and return evaluation.
    """

    transition: np.ndarray
    initial: np.ndarray
    discount: float
    reward: np.ndarray | None = None

    def __post_init__(self):
        t = _freeze(self.transition)
        mu = _freeze(self.initial)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "initial", mu)
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {t.shape}")
        if mu.shape != (t.shape[0],):
            raise ValueError("initial distribution shape mismatch")
        if np.any(t < 0) or np.any(mu < 0):
            raise ValueError("probabilities must be nonnegative")
        if not np.allclose(t.sum(axis=2), 1.0, atol=_ATOL_STOCHASTIC, rtol=0):
            raise ValueError("transition rows must sum to 1")
        if abs(mu.sum() - 1.0) > _ATOL_STOCHASTIC:
            raise ValueError("initial distribution must sum to 1")
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must lie in (0, 1]")
        if self.reward is not None:
            r = _freeze(self.reward)
            object.__setattr__(self, "reward", r)
            if r.shape != (t.shape[0], t.shape[1]):
                raise ValueError("reward table must have shape (S, A)")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_json(self) -> str:
        doc = {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "initial": self.initial.tolist(),
            "discount": self.discount,
            "reward": None if self.reward is None else self.reward.tolist(),
        }
        return json.dumps(doc)

    @staticmethod
    def from_json(text: str) -> "TabularMdp":
        doc = json.loads(text)
        t = np.asarray(doc["transition"], dtype=np.float64)
        if t.shape != (doc["n_states"], doc["n_actions"], doc["n_states"]):
            raise ValueError("transition shape disagrees with declared sizes")
        reward = doc.get("reward")
        return TabularMdp(
            transition=t,
            initial=np.asarray(doc["initial"], dtype=np.float64),
            discount=float(doc["discount"]),
            reward=None if reward is None else np.asarray(reward, dtype=np.float64),
        )


@dataclass(frozen=True)
class TabularPolicy:
    """Stochastic policy as a row-stochastic (S, A) table."""

    probs: np.ndarray

    def __post_init__(self):
        p = _freeze(self.probs)
        object.__setattr__(self, "probs", p)
        if p.ndim != 2:
            raise ValueError("policy table must be 2-D")
        if np.any(p < 0):
            raise ValueError("policy probabilities must be nonnegative")
        if not np.allclose(p.sum(axis=1), 1.0, atol=_ATOL_STOCHASTIC, rtol=0):
            raise ValueError("policy rows must sum to 1")

    @staticmethod
    def deterministic(actions: np.ndarray, n_actions: int) -> "TabularPolicy":
        p = np.zeros((len(actions), n_actions))
        p[np.arange(len(actions)), actions] = 1.0
        return TabularPolicy(p)

    @staticmethod
    def uniform(n_states: int, n_actions: int) -> "TabularPolicy":
        return TabularPolicy(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True)
class OccupancyMeasure:
    """Normalized state-action visitation table: rho >= 0, sum(rho) == 1."""

    rho: np.ndarray

    def __post_init__(self):
        r = _freeze(self.rho)
        object.__setattr__(self, "rho", r)
        if np.any(r < -1e-12):
            raise ValueError("occupancy must be nonnegative")
        if abs(r.sum() - 1.0) > 1e-9:
            raise ValueError(f"occupancy must sum to 1, got {r.sum()!r}")

    def state_marginal(self) -> np.ndarray:
        return self.rho.sum(axis=1)


# ---------------------------------------------------------------------------
# Construction helpers
# ---------------------------------------------------------------------------

GRID_MOVES = ((0, 1), (1, 0), (0, -1), (-1, 0))  # N, E, S, W in (dx, dy)


def build_gridworld(width: int, height: int, goal: tuple[int, int],
                    slip: float = 0.0, step_penalty: float = 0.0,
                    discount: float = 0.99) -> TabularMdp:
    """Slippery gridworld with an absorbing unit-reward goal cell.

    Actions are N/E/S/W; the intended move succeeds with probability 1 - slip,
    otherwise one of the three other directions is taken uniformly at random.
    Moves off the edge stay in place. Start states are uniform over non-goal
    cells. The slip keeps the dynamics full-support enough that random
    behavior data can cover the state space.
    """
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be >= 1")
    if not (0.0 <= slip < 1.0):
        raise ValueError("slip must lie in [0, 1)")
    gx, gy = goal
    if not (0 <= gx < width and 0 <= gy < height):
        raise ValueError(f"goal {goal} outside {width}x{height} grid")

    n_states = width * height
    n_actions = 4

    def sid(x, y):
        return y * width + x

    def step(x, y, move):
        dx, dy = move
        nx, ny = min(max(x + dx, 0), width - 1), min(max(y + dy, 0), height - 1)
        return sid(nx, ny)

    t = np.zeros((n_states, n_actions, n_states))
    r = np.full((n_states, n_actions), float(step_penalty))
    goal_id = sid(gx, gy)
    for y in range(height):
        for x in range(width):
            s = sid(x, y)
            if s == goal_id:
                t[s, :, s] = 1.0
                r[s, :] = 1.0
                continue
            for a, move in enumerate(GRID_MOVES):
                t[s, a, step(x, y, move)] += 1.0 - slip
                for other in range(n_actions):
                    if other != a:
                        t[s, a, step(x, y, GRID_MOVES[other])] += slip / 3.0

    mu = np.ones(n_states)
    if n_states > 1:
        mu[goal_id] = 0.0
    mu /= mu.sum()
    return TabularMdp(transition=t, initial=mu, discount=discount, reward=r)


# ---------------------------------------------------------------------------
# Planning and evaluation
# ---------------------------------------------------------------------------

def value_iteration(mdp: TabularMdp, tol: float = 1e-10,
                    max_iter: int = 100_000) -> TabularPolicy:
    """Greedy deterministic policy from converged Q values.

    Ties broken toward the lowest action index so the result is unique.
    """
    if mdp.reward is None:
        raise ValueError("value_iteration requires a reward table")
    if tol <= 0:
        raise ValueError("tol must be positive")
    v = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        q = mdp.reward + mdp.discount * mdp.transition @ v
        v_new = q.max(axis=1)
        if np.max(np.abs(v_new - v)) < tol:
            v = v_new
            break
        v = v_new
    q = mdp.reward + mdp.discount * mdp.transition @ v
    return TabularPolicy.deterministic(q.argmax(axis=1), mdp.n_actions)


def policy_transition_matrix(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    """State-to-state chain P[s, s'] = sum_a pi(a|s) T(s'|s, a)."""
    return np.einsum("sa,sap->sp", policy.probs, mdp.transition)


def stationary_distribution(mdp: TabularMdp, policy: TabularPolicy) -> OccupancyMeasure:
    """Discounted occupancy measure by direct linear solve.

    Solves (I - gamma P_pi^T) d = (1 - gamma) mu for the state marginal, then
    rho(s, a) = d(s) pi(a|s). The system is nonsingular for gamma < 1.
    """
    gamma = mdp.discount
    if gamma >= 1.0:
        raise ValueError("stationary_distribution requires discount < 1")
    p = policy_transition_matrix(mdp, policy)
    d = np.linalg.solve(np.eye(mdp.n_states) - gamma * p.T, (1.0 - gamma) * mdp.initial)
    rho = np.clip(d, 0.0, None)[:, None] * policy.probs
    return OccupancyMeasure(rho / rho.sum())


def average_state_action_frequency(mdp: TabularMdp, policy: TabularPolicy) -> OccupancyMeasure:
    """Long-run (undiscounted) state-action frequency of the induced chain.

    Computed from the Cesaro-limit state distribution, which for the ergodic
    chains used here is the unique solution of d^T P = d^T with sum(d) = 1.
    """
    p = policy_transition_matrix(mdp, policy)
    n = mdp.n_states
    # d solves (P^T - I) d = 0 with the normalization row appended.
    a = np.vstack([p.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    d, *_ = np.linalg.lstsq(a, b, rcond=None)
    d = np.clip(d, 0.0, None)
    d /= d.sum()
    rho = d[:, None] * policy.probs
    return OccupancyMeasure(rho / rho.sum())


def bellman_flow_residual(mdp: TabularMdp, rho) -> np.ndarray:
    """Per-state flow residual of a candidate occupancy table.

    f(s) = (1-gamma) mu(s) + gamma sum_{s',a} T(s|s',a) rho(s',a)
           - sum_a rho(s,a), zero exactly when rho is a valid occupancy. In
    undiscounted mode (gamma == 1) the initial-distribution term drops out.
    """
    table = rho.rho if isinstance(rho, OccupancyMeasure) else np.asarray(rho, dtype=np.float64)
    if table.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("occupancy shape does not match MDP")
    gamma = mdp.discount
    inflow = np.einsum("sap,sa->p", mdp.transition, table)
    residual = gamma * inflow - table.sum(axis=1)
    if gamma < 1.0:
        residual = residual + (1.0 - gamma) * mdp.initial
    return residual


def policy_return(mdp: TabularMdp, policy: TabularPolicy) -> float:
    """Expected reward under the policy's normalized occupancy."""
    if mdp.reward is None:
        raise ValueError("policy_return requires a reward table")
    if mdp.discount < 1.0:
        occ = stationary_distribution(mdp, policy)
    else:
        occ = average_state_action_frequency(mdp, policy)
    return float(np.sum(occ.rho * mdp.reward))
