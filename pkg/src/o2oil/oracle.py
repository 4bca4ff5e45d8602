"""Brute-force ground truth for the KL-regularized occupancy problem.

Maximizes E_rho[r] - alpha * KL(rho || rho_o) over valid occupancies of tiny
MDPs by searching policy space directly: every policy induces a unique
occupancy (and vice versa on the feasible set), so flow feasibility comes for
free and the search space is a product of per-state simplices. A second,
structurally different oracle runs exponentiated-gradient ascent on rho
itself with an augmented Lagrangian for the flow constraints, so the two can
cross-check each other. Guarded to n_states <= 5, n_actions <= 4.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .mdp import (OccupancyMeasure, TabularMdp, TabularPolicy,
                  average_state_action_frequency, bellman_flow_residual,
                  policy_transition_matrix, stationary_distribution)
from .reward import AuxiliaryReward

MAX_STATES = 5
MAX_ACTIONS = 4


@dataclass(frozen=True)
class OracleSolution:
    rho_star: OccupancyMeasure
    pi_star: TabularPolicy
    primal_value: float

    def __post_init__(self):
        if not np.isfinite(self.primal_value):
            raise ValueError("primal value must be finite")


def _reward_values(reward) -> np.ndarray:
    return reward.values if isinstance(reward, AuxiliaryReward) else np.asarray(reward, dtype=np.float64)


def primal_objective(rho: np.ndarray, reward, rho_o: np.ndarray,
                     alpha: float = 1.0) -> float:
    """E_rho[r] - alpha * KL(rho || rho_o); -inf off the rho_o support."""
    r = _reward_values(reward)
    if np.any((rho > 0) & (rho_o <= 0)):
        return -np.inf
    active = rho > 0
    kl = float(np.sum(rho[active] * (np.log(rho[active]) - np.log(rho_o[active]))))
    return float(np.sum(rho * r)) - alpha * kl


def _occupancy(mdp: TabularMdp, probs: np.ndarray) -> np.ndarray:
    if mdp.discount < 1.0:
        return stationary_distribution(mdp, TabularPolicy(probs)).rho
    return average_state_action_frequency(mdp, TabularPolicy(probs)).rho


def _occupancies_batch(mdp: TabularMdp, probs_batch: np.ndarray) -> np.ndarray:
    """Occupancies for a stack of policies via batched linear solves."""
    gamma = mdp.discount
    if gamma >= 1.0:
        return np.stack([_occupancy(mdp, p) for p in probs_batch])
    p = np.einsum("nsa,sap->nsp", probs_batch, mdp.transition)
    n, s = p.shape[0], p.shape[1]
    lhs = np.eye(s)[None] - gamma * np.swapaxes(p, 1, 2)
    d = np.linalg.solve(lhs, np.broadcast_to((1 - gamma) * mdp.initial, (n, s))[..., None])[..., 0]
    d = np.clip(d, 0.0, None)
    rho = d[:, :, None] * probs_batch
    return rho / rho.sum(axis=(1, 2), keepdims=True)


def _simplex_grid(dim: int, resolution: int) -> np.ndarray:
    """All points with coordinates k_i / resolution summing to 1."""
    pts = []
    for comp in itertools.combinations_with_replacement(range(dim), resolution):
        counts = np.bincount(comp, minlength=dim)
        pts.append(counts / resolution)
    return np.array(pts)


def primal_brute_force(mdp: TabularMdp, reward, rho_o: np.ndarray,
                       alpha: float = 1.0, tol: float = 1e-6,
                       resolution: int = 6, max_sweeps: int = 60,
                       restarts: int = 3, seed: int = 0) -> OracleSolution:
    """Maximize the regularized objective over the policy simplex product.

    Cyclic per-state searches: at each state, evaluate a simplex grid mixed
    toward the incumbent row at geometrically shrinking radii, keeping the
    best candidate. Multiple seeded restarts guard against poor basins.
    """
    if mdp.n_states > MAX_STATES or mdp.n_actions > MAX_ACTIONS:
        raise ValueError(
            f"oracle limited to {MAX_STATES} states / {MAX_ACTIONS} actions, "
            f"got {mdp.n_states}/{mdp.n_actions}")
    rho_o = np.asarray(rho_o, dtype=np.float64)
    grid = _simplex_grid(mdp.n_actions, resolution)
    rng = np.random.default_rng(seed)

    def value(probs):
        return primal_objective(_occupancy(mdp, probs), reward, rho_o, alpha)

    best_probs, best_val = None, -np.inf
    for restart in range(restarts):
        if restart == 0:
            probs = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
        else:
            probs = rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states)
        current = value(probs)
        for _ in range(max_sweeps):
            improved = current
            for s in range(mdp.n_states):
                for radius in (1.0, 0.3, 0.1, 0.03, 0.01, 0.003):
                    cands = (1.0 - radius) * probs[s][None, :] + radius * grid
                    batch = np.repeat(probs[None], len(cands), axis=0)
                    batch[:, s, :] = cands
                    rhos = _occupancies_batch(mdp, batch)
                    vals = np.array([primal_objective(r, reward, rho_o, alpha)
                                     for r in rhos])
                    k = int(np.argmax(vals))
                    if vals[k] > current:
                        probs = batch[k]
                        current = vals[k]
            if current - improved < tol * 1e-3:
                break
        if current > best_val:
            best_probs, best_val = probs, current

    rho = _occupancy(mdp, best_probs)
    return OracleSolution(rho_star=OccupancyMeasure(rho),
                          pi_star=TabularPolicy(best_probs),
                          primal_value=best_val)


def primal_exponentiated_gradient(mdp: TabularMdp, reward, rho_o: np.ndarray,
                                  alpha: float = 1.0, outer: int = 200,
                                  inner: int = 300, step: float = 0.05,
                                  penalty: float = 50.0) -> OracleSolution:
    """Second oracle: mirror ascent on rho with an augmented Lagrangian.

    rho stays on the simplex through multiplicative updates; the flow
    equalities are enforced by a method-of-multipliers outer loop. Entirely
    independent of the policy-space search above.
    """
    r = _reward_values(reward)
    rho_o = np.asarray(rho_o, dtype=np.float64)
    gamma = mdp.discount
    rho = rho_o.copy()
    rho /= rho.sum()
    lam = np.zeros(mdp.n_states)

    def flow(rho):
        return bellman_flow_residual(mdp, rho)

    for _ in range(outer):
        for _ in range(inner):
            f = flow(rho)
            adj = lam + penalty * f
            # d/d rho of [objective - lam^T f - penalty/2 |f|^2]
            grad = (r - alpha * (np.log(np.clip(rho, 1e-300, None))
                                 - np.log(np.clip(rho_o, 1e-300, None)) + 1.0)
                    - gamma * (mdp.transition @ adj) + adj[:, None])
            rho = rho * np.exp(step * (grad - grad.max()))
            total = rho.sum()
            if total <= 0 or not np.isfinite(total):
                raise FloatingPointError("mirror ascent left the simplex")
            rho /= total
        lam = lam + penalty * flow(rho)

    # mass off the support contributes nothing in the limit; drop it
    rho = np.where(rho_o > 0, rho, 0.0)
    rho /= rho.sum()
    marg = rho.sum(axis=1)
    probs = np.where(marg[:, None] > 0, rho / np.clip(marg[:, None], 1e-300, None),
                     1.0 / mdp.n_actions)
    probs /= probs.sum(axis=1, keepdims=True)
    return OracleSolution(rho_star=OccupancyMeasure(rho),
                          pi_star=TabularPolicy(probs),
                          primal_value=primal_objective(rho, reward, rho_o, alpha))


def duality_gap(oracle: OracleSolution, nu: np.ndarray, reward, cfg, data,
                mdp: TabularMdp, lam: float | None = None) -> float:
    """dual_value(nu) - primal_value; nonnegative up to numerical slack."""
    from .ssp import dual_value
    return dual_value(nu, reward, cfg, data, mdp, lam=lam) - oracle.primal_value


def write_gap_report(path, rows: list[dict]) -> None:
    """CSV report: one row per fixture with primal, dual, and gap columns."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["fixture", "primal", "dual", "gap"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
