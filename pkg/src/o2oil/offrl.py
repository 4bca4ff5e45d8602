"""Offline RL through the same saddle-point machinery.

With a true reward signal r in place of the density-ratio reward, the
regularized objective max_pi E[r] - alpha * KL(rho_pi || rho_o) has exactly
the structure the imitation dual solves: run the saddle-point solve with
delta built from r (unscaled) and alpha weighting the conjugate terms, then
extract the policy by weighted behavior cloning with weights y*. Reverse-KL
extraction is deliberately not offered on this path.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, empirical_distribution
from .mdp import TabularMdp
from .policy import ExtractionConfig, extract_policy_weighted_bc
from .ssp import SspConfig, solve_ssp


@dataclass(frozen=True)
class OffRlConfig:
    alpha: float = 1.0
    iterations: int | None = None
    lr_nu: float = 3e-4
    lr_y: float = 3e-4
    seed: int = 0
    mode: str = "exact"
    lr_decay_tau: float | None = None
    kappa: float = 0.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def reward_table_from_dataset(data: Dataset, n_states: int, n_actions: int) -> np.ndarray:
    """Average recorded per-transition rewards into an (S, A) table."""
    cols = data.as_arrays()
    if "reward" not in cols:
        raise ValueError("dataset transitions carry no rewards")
    total = np.zeros((n_states, n_actions))
    count = np.zeros((n_states, n_actions))
    np.add.at(total, (cols["state"], cols["action"]), cols["reward"])
    np.add.at(count, (cols["state"], cols["action"]), 1.0)
    with np.errstate(invalid="ignore"):
        return np.where(count > 0, total / np.where(count > 0, count, 1.0), 0.0)


def ssp_config_for(cfg: OffRlConfig) -> SspConfig:
    return SspConfig(lr_nu=cfg.lr_nu, lr_y=cfg.lr_y, iterations=cfg.iterations,
                     alpha=cfg.alpha, seed=cfg.seed, mode=cfg.mode,
                     lr_decay_tau=cfg.lr_decay_tau, kappa=cfg.kappa)


def solve_offline_rl(data, mdp: TabularMdp, cfg: OffRlConfig, reward=None):
    """Solve the alpha-regularized reward-maximization dual.

    `reward` defaults to the rewards recorded in the dataset (or the MDP
    table for population data). Returns (DualVariables, SspDiagnostics).
    """
    if reward is None:
        if isinstance(data, Dataset):
            reward = reward_table_from_dataset(data, mdp.n_states, mdp.n_actions)
        elif mdp.reward is not None:
            reward = mdp.reward
        else:
            raise ValueError("no reward information available")
    return solve_ssp(reward, data, mdp, ssp_config_for(cfg))


def extract_offline_rl_policy(data, y_star: np.ndarray, mdp: TabularMdp,
                              cfg: OffRlConfig, policy=None):
    """Weighted behavior cloning with the solved correction as weights."""
    if not np.all(np.isfinite(y_star)):
        raise ValueError("y* must be finite")
    if isinstance(data, Dataset):
        return extract_policy_weighted_bc(
            data, y_star, policy=policy,
            cfg=ExtractionConfig(method="weighted_bc", seed=cfg.seed),
            n_states=mdp.n_states, n_actions=mdp.n_actions)
    # population route: weights against the union distribution directly
    from .policy import extract_policy_closed_form
    if hasattr(data, "rho_o"):
        rho = data.rho_o
    elif hasattr(data, "probs"):
        rho = data.probs
    else:
        rho = np.asarray(data)
    return extract_policy_closed_form(rho, y_star)
