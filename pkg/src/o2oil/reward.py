"""Density-ratio discriminators and the log-ratio reward they induce.

A discriminator d(s, a) separating expert pairs from union-data pairs
recovers the log density ratio log(rho_e / rho_o) = log(d / (1 - d)) at its
optimum. In tabular mode the optimum is available in closed form from counts;
the parametric path trains a small sigmoid net by stochastic gradient ascent
on the usual cross-entropy objective. Outputs are clipped (default
[0.1, 0.9]) before entering any log, which bounds the induced reward to
[-log 9, log 9] and keeps the downstream exponentials tame.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, EmpiricalDistribution
from .nn import Adam, Mlp

DEFAULT_CLIP = (0.1, 0.9)


@dataclass(frozen=True)
class DensityDiscriminator:
    """Tabular discriminator with raw values and evaluation-time clipping.

    `defined_mask` marks pairs observed in at least one dataset; undefined
    pairs evaluate to the lower clip bound (pessimistic off-support).
    """

    values: np.ndarray
    defined_mask: np.ndarray
    clip_bounds: tuple[float, float] = DEFAULT_CLIP

    def table(self) -> np.ndarray:
        """Clipped d values, lower bound where undefined."""
        lo, hi = self.clip_bounds
        out = np.clip(self.values, lo, hi)
        return np.where(self.defined_mask, out, lo)

    def raw_table(self) -> np.ndarray:
        lo, _ = self.clip_bounds
        return np.where(self.defined_mask, self.values, lo)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", "a", "d"])
            table = self.table()
            for s in range(table.shape[0]):
                for a in range(table.shape[1]):
                    writer.writerow([s, a, f"{table[s, a]:.12g}"])


@dataclass(frozen=True)
class ParametricDiscriminator:
    """Sigmoid-head net over one-hot (s, a) features."""

    net: Mlp
    n_states: int
    n_actions: int
    clip_bounds: tuple[float, float] = DEFAULT_CLIP

    def logits(self, states, actions) -> np.ndarray:
        return self.net.value(one_hot_pairs(states, actions, self.n_states, self.n_actions))[:, 0]

    def table(self) -> np.ndarray:
        s, a = np.divmod(np.arange(self.n_states * self.n_actions), self.n_actions)
        d = 1.0 / (1.0 + np.exp(-self.logits(s, a)))
        lo, hi = self.clip_bounds
        return np.clip(d.reshape(self.n_states, self.n_actions), lo, hi)


@dataclass(frozen=True)
class AuxiliaryReward:
    """Reward table r(s, a) = alpha * log(d / (1 - d)) + beta."""

    values: np.ndarray
    scale_alpha: float = 1.0
    shift_beta: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise ValueError("auxiliary reward must be finite everywhere")
        if self.scale_alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.shift_beta < 0:
            raise ValueError("beta must be nonnegative")


def fit_discriminator_closed_form(rho_e: EmpiricalDistribution,
                                  rho_o: EmpiricalDistribution,
                                  clip_bounds=DEFAULT_CLIP) -> DensityDiscriminator:
    """Exact optimum d(s, a) = rho_e / (rho_e + rho_o) from counts."""
    if rho_e.probs.shape != rho_o.probs.shape:
        raise ValueError("distributions live on different spaces")
    total = rho_e.probs + rho_o.probs
    defined = total > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(defined, rho_e.probs / np.where(defined, total, 1.0), 0.0)
    return DensityDiscriminator(values=values, defined_mask=defined, clip_bounds=clip_bounds)


def one_hot_pairs(states, actions, n_states: int, n_actions: int) -> np.ndarray:
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    x = np.zeros((len(states), n_states + n_actions))
    x[np.arange(len(states)), states] = 1.0
    x[np.arange(len(states)), n_states + actions] = 1.0
    return x


def fit_discriminator_logistic(expert: Dataset, union: Dataset,
                               n_states: int, n_actions: int,
                               steps: int = 5000, lr: float = 1e-5,
                               batch: int = 256, seed: int = 0,
                               hidden: tuple[int, ...] = (256, 256),
                               clip_bounds=DEFAULT_CLIP) -> ParametricDiscriminator:
    """Train d by stochastic gradient ascent on the cross-entropy objective.

    Expert pairs are the positive class. Raises if the loss goes non-finite,
    naming the offending step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if len(expert) == 0 or len(union) == 0:
        raise ValueError("both datasets must be nonempty")
    rng = np.random.default_rng(seed)
    net = Mlp([n_states + n_actions, *hidden, 1], seed=seed)
    opt = Adam(net, lr=lr)
    exp_cols = expert.as_arrays()
    uni_cols = union.as_arrays()
    for step in range(steps):
        ei = rng.integers(len(expert), size=min(batch, len(expert)))
        ui = rng.integers(len(union), size=min(batch, len(union)))
        xe = one_hot_pairs(exp_cols["state"][ei], exp_cols["action"][ei], n_states, n_actions)
        xu = one_hot_pairs(uni_cols["state"][ui], uni_cols["action"][ui], n_states, n_actions)
        x = np.vstack([xe, xu])
        labels = np.concatenate([np.ones(len(ei)), np.zeros(len(ui))])
        out, cache = net.forward(x)
        logit = out[:, 0]
        if not np.all(np.isfinite(logit)):
            raise FloatingPointError(f"discriminator diverged at step {step}")
        with np.errstate(over="ignore"):
            d = 1.0 / (1.0 + np.exp(-logit))
        loss = -np.mean(labels * np.log(np.clip(d, 1e-12, None))
                        + (1 - labels) * np.log(np.clip(1 - d, 1e-12, None)))
        if not np.isfinite(loss):
            raise FloatingPointError(f"discriminator loss diverged at step {step}")
        # d(-loss)/d(logit) per sample, scaled for the mean.
        upstream = ((labels - d) / len(labels))[:, None]
        grads = net.backward(cache, upstream)
        opt.step([(-dw, -db) for dw, db in grads])  # ascend
    return ParametricDiscriminator(net=net, n_states=n_states, n_actions=n_actions,
                                   clip_bounds=clip_bounds)


def discriminator_objective(d_table: np.ndarray, rho_e: np.ndarray,
                            rho_o: np.ndarray) -> float:
    """Population cross-entropy value E_e[log d] + E_o[log(1 - d)]."""
    with np.errstate(divide="ignore", invalid="ignore"):
        le = np.where(rho_e > 0, np.log(d_table), 0.0)
        lo = np.where(rho_o > 0, np.log(1.0 - d_table), 0.0)
    return float(np.sum(rho_e * le) + np.sum(rho_o * lo))


def auxiliary_reward(d, alpha: float = 1.0, beta: float = 0.0) -> AuxiliaryReward:
    """Reward from a (clipped) discriminator: alpha * logit(d) + beta."""
    table = d.table()
    values = alpha * np.log(table / (1.0 - table)) + beta
    return AuxiliaryReward(values=values, scale_alpha=alpha, shift_beta=beta)


def log_ratio_reward(rho_e: EmpiricalDistribution, rho_o: EmpiricalDistribution,
                     alpha: float = 1.0, beta: float = 0.0) -> AuxiliaryReward:
    """Exact log-ratio reward; requires rho_o support to cover rho_e support.

    Off the union support the ratio is undefined; those cells get the most
    pessimistic clipped value so the table stays finite.
    """
    lo = np.log(DEFAULT_CLIP[0] / (1.0 - DEFAULT_CLIP[0]))
    if np.any((rho_e.probs > 0) & (rho_o.probs == 0)):
        raise ValueError("expert support not covered by union distribution")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rho_o.probs > 0,
                         np.log(np.where(rho_e.probs > 0, rho_e.probs, np.nan))
                         - np.log(np.where(rho_o.probs > 0, rho_o.probs, np.nan)),
                         np.nan)
    values = np.where(np.isfinite(ratio), ratio, lo)
    return AuxiliaryReward(values=alpha * values + beta, scale_alpha=alpha, shift_beta=beta)
