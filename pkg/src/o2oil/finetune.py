"""Adversarial online finetuning on tabular MDPs.

A logit-table discriminator and a softmax-logit policy play the usual
adversarial imitation game: the discriminator ascends
E_policy[log D] + E_expert[log(1 - D)] (policy pairs are the positive class),
and the policy performs score-function ascent on the discounted return of the
local reward r = -log D(s, a), with a per-timestep batch-mean baseline.

The discriminator can start from the stitched offline object, from random
logits, or from an explicit table; comparing the first two on a warm-started
policy is exactly the retention experiment at the bottom of the module. All
runs are deterministic given the config seed, and evaluation uses exact
policy returns (linear solves), never evaluation rollouts.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, EmpiricalDistribution, empirical_distribution
from .mdp import TabularMdp, TabularPolicy, policy_return
from .nn import AdamArrays
from .policy import occupancy_divergence
from .stitch import StitchedDiscriminator

DISC_INITS = ("stitched", "random", "table")
REWARD_FLAVORS = ("neg_log_d", "log_one_minus_d")


@dataclass(frozen=True)
class GailConfig:
    episodes: int = 200
    horizon: int = 64
    disc_steps_per_iter: int = 1
    policy_steps_per_iter: int = 1
    lr_disc: float = 1e-5
    lr_policy: float = 1e-4
    seed: int = 0
    disc_init: str = "stitched"
    rollout_batch: int = 5
    disc_batch: int = 256
    disc_clip: tuple[float, float] = (0.1, 0.9)
    random_disc_scale: float = 1.0
    reward_flavor: str = "neg_log_d"
    eval_kl: bool = True

    def __post_init__(self):
        if min(self.episodes, self.horizon, self.disc_steps_per_iter,
               self.policy_steps_per_iter, self.rollout_batch) < 1:
            raise ValueError("counts must be positive")
        if self.lr_disc <= 0 or self.lr_policy <= 0:
            raise ValueError("learning rates must be positive")
        if self.disc_init not in DISC_INITS:
            raise ValueError(f"disc_init must be one of {DISC_INITS}")
        if self.reward_flavor not in REWARD_FLAVORS:
            raise ValueError(f"reward_flavor must be one of {REWARD_FLAVORS}")


@dataclass
class LearningCurve:
    points: list[tuple[int, str, float]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def log(self, episodes: int, metric: str, value: float) -> None:
        if self.points and episodes < self.points[-1][0]:
            raise ValueError("episode counter must be nondecreasing")
        self.points.append((episodes, metric, float(value)))

    def series(self, metric: str):
        xs = [p[0] for p in self.points if p[1] == metric]
        ys = [p[2] for p in self.points if p[1] == metric]
        return np.asarray(xs), np.asarray(ys)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episodes", "metric", "value"])
            for ep, metric, value in self.points:
                writer.writerow([ep, metric, f"{value:.12g}"])

    @staticmethod
    def from_csv(path) -> "LearningCurve":
        curve = LearningCurve()
        with open(path, "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for ep, metric, value in reader:
                curve.points.append((int(ep), metric, float(value)))
        return curve


class TabularSoftmaxPolicy:
    """Trainable softmax-over-logits policy table."""

    def __init__(self, logits: np.ndarray):
        self.logits = np.asarray(logits, dtype=np.float64).copy()

    @staticmethod
    def from_policy(policy: TabularPolicy, floor: float = 1e-8) -> "TabularSoftmaxPolicy":
        return TabularSoftmaxPolicy(np.log(np.clip(policy.probs, floor, None)))

    @staticmethod
    def uniform(n_states: int, n_actions: int) -> "TabularSoftmaxPolicy":
        return TabularSoftmaxPolicy(np.zeros((n_states, n_actions)))

    def probs(self) -> np.ndarray:
        z = self.logits - self.logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def as_tabular(self) -> TabularPolicy:
        return TabularPolicy(self.probs())


class GailDiscriminator:
    """Per-pair logit table; values are sigmoids clipped for reward evaluation."""

    def __init__(self, logits: np.ndarray, clip: tuple[float, float] = (0.1, 0.9)):
        self.logits = np.asarray(logits, dtype=np.float64).copy()
        self.clip = clip

    @staticmethod
    def from_stitched(stitched: StitchedDiscriminator,
                      clip: tuple[float, float] = (0.1, 0.9)) -> "GailDiscriminator":
        return GailDiscriminator(stitched.logits(), clip=clip)

    @staticmethod
    def random_init(n_states: int, n_actions: int, scale: float, seed: int,
                    clip: tuple[float, float] = (0.1, 0.9)) -> "GailDiscriminator":
        rng = np.random.default_rng(seed)
        return GailDiscriminator(rng.normal(0.0, scale, size=(n_states, n_actions)), clip=clip)

    @staticmethod
    def from_table(d_table: np.ndarray,
                   clip: tuple[float, float] = (0.1, 0.9)) -> "GailDiscriminator":
        d = np.clip(np.asarray(d_table, dtype=np.float64), 1e-12, 1 - 1e-12)
        return GailDiscriminator(np.log(d / (1 - d)), clip=clip)

    def raw_values(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits))

    def values(self) -> np.ndarray:
        return np.clip(self.raw_values(), *self.clip)

    def rewards(self, flavor: str = "neg_log_d") -> np.ndarray:
        d = self.values()
        if flavor == "neg_log_d":
            return -np.log(d)
        return np.log(1.0 - d)


# ---------------------------------------------------------------------------
# Discriminator updates
# ---------------------------------------------------------------------------

def discriminator_gradient(disc: GailDiscriminator,
                           policy_pairs: tuple[np.ndarray, np.ndarray] | None,
                           expert_pairs: tuple[np.ndarray, np.ndarray] | None,
                           policy_weights: np.ndarray | None = None,
                           expert_weights: np.ndarray | None = None) -> np.ndarray:
    """Logit-table gradient of E_pi[log D] + E_e[log(1 - D)].

    Either sampled pairs (index arrays) or full weight tables may be supplied
    for each side; weight tables give the exact population gradient.
    """
    d = disc.raw_values()
    grad = np.zeros_like(disc.logits)
    if policy_weights is not None:
        grad += policy_weights * (1.0 - d)
    elif policy_pairs is not None:
        s, a = policy_pairs
        np.add.at(grad, (s, a), (1.0 - d[s, a]) / len(s))
    if expert_weights is not None:
        grad -= expert_weights * d
    elif expert_pairs is not None:
        s, a = expert_pairs
        np.add.at(grad, (s, a), -d[s, a] / len(s))
    return grad


def discriminator_loss(disc: GailDiscriminator, policy_pairs, expert_pairs) -> float:
    d = np.clip(disc.raw_values(), 1e-12, 1 - 1e-12)
    sp, ap = policy_pairs
    se, ae = expert_pairs
    value = float(np.mean(np.log(d[sp, ap])) + np.mean(np.log(1.0 - d[se, ae])))
    if not np.isfinite(value):
        raise FloatingPointError("discriminator objective became non-finite")
    return value


def gail_discriminator_step(disc: GailDiscriminator, expert_pairs, policy_pairs,
                            opt: AdamArrays, lr: float | None = None) -> float:
    """One ascent step on the adversarial objective; returns its sampled value."""
    if len(expert_pairs[0]) == 0 or len(policy_pairs[0]) == 0:
        raise ValueError("both batches must be nonempty")
    value = discriminator_loss(disc, policy_pairs, expert_pairs)
    grad = discriminator_gradient(disc, policy_pairs, expert_pairs)
    opt.step([-grad], lr=lr)  # ascend
    return value


# ---------------------------------------------------------------------------
# Policy updates (score function with per-timestep baseline)
# ---------------------------------------------------------------------------

def discounted_tail_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """G[e, t] = sum_{k >= t} gamma^(k-t) r[e, k] for an (episodes, T) array."""
    g = np.zeros_like(rewards)
    acc = np.zeros(rewards.shape[0])
    for t in range(rewards.shape[1] - 1, -1, -1):
        acc = rewards[:, t] + gamma * acc
        g[:, t] = acc
    return g


def reinforce_surrogate_and_gradient(logits: np.ndarray, states: np.ndarray,
                                     actions: np.ndarray, advantages: np.ndarray,
                                     gamma: float):
    """Surrogate (1/E) sum_e sum_t gamma^t A[e,t] log pi(a|s) and its gradient.

    Advantages are treated as constants, which makes the analytic gradient
    directly comparable to finite differences of this same scalar.
    """
    n_ep, horizon = states.shape
    z = logits - logits.max(axis=1, keepdims=True)
    logp_all = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p_all = np.exp(logp_all)
    disc = gamma ** np.arange(horizon)
    coeff = advantages * disc[None, :] / n_ep
    value = float(np.sum(coeff * logp_all[states, actions]))
    grad = np.zeros_like(logits)
    np.add.at(grad, (states.ravel(), actions.ravel()), coeff.ravel())
    flat_coeff = coeff.ravel()[:, None] * p_all[states.ravel()]
    np.add.at(grad, (np.repeat(states.ravel(), logits.shape[1]),
                     np.tile(np.arange(logits.shape[1]), states.size)),
              -flat_coeff.ravel())
    return value, grad


def gail_policy_step(policy: TabularSoftmaxPolicy, states: np.ndarray,
                     actions: np.ndarray, disc: GailDiscriminator, gamma: float,
                     opt: AdamArrays, lr: float | None = None,
                     reward_flavor: str = "neg_log_d"):
    """One score-function ascent step from a batch of equal-length episodes.

    states/actions are (episodes, T) index arrays. Rewards come from the
    (clipped) discriminator; the baseline is the per-timestep mean tail
    return across the batch, so constant rewards yield zero advantages.
    """
    if states.size == 0:
        raise ValueError("empty rollout batch")
    rewards = disc.rewards(reward_flavor)[states, actions]
    g = discounted_tail_returns(rewards, gamma)
    advantages = g - g.mean(axis=0, keepdims=True)
    value, grad = reinforce_surrogate_and_gradient(policy.logits, states, actions,
                                                   advantages, gamma)
    opt.step([-grad], lr=lr)  # ascend
    return value, advantages


# ---------------------------------------------------------------------------
# Full loop and the retention experiment
# ---------------------------------------------------------------------------

def _rollout_batch(mdp: TabularMdp, policy: TabularSoftmaxPolicy, n_episodes: int,
                   horizon: int, rng: np.random.Generator):
    probs = policy.probs()
    states = np.zeros((n_episodes, horizon), dtype=np.int64)
    actions = np.zeros((n_episodes, horizon), dtype=np.int64)
    s = rng.choice(mdp.n_states, size=n_episodes, p=mdp.initial)
    for t in range(horizon):
        u = rng.uniform(size=(n_episodes, 1))
        a = np.clip((probs[s].cumsum(axis=1) < u).sum(axis=1), 0, mdp.n_actions - 1)
        u2 = rng.uniform(size=(n_episodes, 1))
        sn = np.clip((mdp.transition[s, a].cumsum(axis=1) < u2).sum(axis=1),
                     0, mdp.n_states - 1)
        states[:, t], actions[:, t] = s, a
        s = sn
    return states, actions


def make_discriminator(cfg: GailConfig, n_states: int, n_actions: int,
                       stitched: StitchedDiscriminator | None = None,
                       table: np.ndarray | None = None) -> GailDiscriminator:
    if cfg.disc_init == "stitched":
        if stitched is None:
            raise ValueError("disc_init='stitched' needs a stitched discriminator")
        return GailDiscriminator.from_stitched(stitched, clip=cfg.disc_clip)
    if cfg.disc_init == "table":
        if table is None:
            raise ValueError("disc_init='table' needs an explicit table")
        return GailDiscriminator.from_table(table, clip=cfg.disc_clip)
    return GailDiscriminator.random_init(n_states, n_actions, cfg.random_disc_scale,
                                         cfg.seed, clip=cfg.disc_clip)


def run_gail(mdp: TabularMdp, policy: TabularSoftmaxPolicy, disc: GailDiscriminator,
             expert_data: Dataset, cfg: GailConfig):
    """Alternating discriminator/policy updates under an episode budget.

    Returns (policy, discriminator, LearningCurve). The curve logs the exact
    return (and occupancy KL against the empirical expert distribution) after
    every iteration, indexed by environment episodes consumed.
    """
    expert = expert_data.filter("e") if expert_data.source_counts()["e"] else expert_data
    if len(expert) == 0:
        raise ValueError("expert dataset is empty")
    exp_cols = expert.as_arrays()
    rho_e = empirical_distribution(expert, shape=(mdp.n_states, mdp.n_actions))
    rng = np.random.default_rng(cfg.seed)
    opt_d = AdamArrays([disc.logits], lr=cfg.lr_disc)
    opt_p = AdamArrays([policy.logits], lr=cfg.lr_policy)
    curve = LearningCurve(meta={"seed": cfg.seed, "disc_init": cfg.disc_init,
                                "env_steps": 0})
    gamma = mdp.discount

    curve.log(0, "return", policy_return(mdp, policy.as_tabular()))
    if cfg.eval_kl:
        curve.log(0, "kl", occupancy_divergence(mdp, policy.as_tabular(), rho_e))

    consumed = 0
    while consumed < cfg.episodes:
        n_ep = min(cfg.rollout_batch, cfg.episodes - consumed)
        states, actions = _rollout_batch(mdp, policy, n_ep, cfg.horizon, rng)
        consumed += n_ep
        curve.meta["env_steps"] += int(states.size)

        flat_s, flat_a = states.ravel(), actions.ravel()
        for _ in range(cfg.disc_steps_per_iter):
            pi_idx = rng.integers(len(flat_s), size=min(cfg.disc_batch, len(flat_s)))
            ex_idx = rng.integers(len(exp_cols["state"]),
                                  size=min(cfg.disc_batch, len(exp_cols["state"])))
            gail_discriminator_step(
                disc,
                (exp_cols["state"][ex_idx], exp_cols["action"][ex_idx]),
                (flat_s[pi_idx], flat_a[pi_idx]),
                opt_d)
        for _ in range(cfg.policy_steps_per_iter):
            gail_policy_step(policy, states, actions, disc, gamma, opt_p,
                             reward_flavor=cfg.reward_flavor)

        curve.log(consumed, "return", policy_return(mdp, policy.as_tabular()))
        if cfg.eval_kl:
            curve.log(consumed, "kl", occupancy_divergence(mdp, policy.as_tabular(), rho_e))
    return policy, disc, curve


def retention_ratio(curve: LearningCurve, base_return: float, n_evals: int = 5) -> float:
    """min over the first n post-update return evaluations / baseline return."""
    xs, ys = curve.series("return")
    post = ys[xs > 0][:n_evals]
    return float(post.min() / base_return)


def unlearning_experiment(mdp: TabularMdp, pretrained: TabularPolicy,
                          stitched: StitchedDiscriminator, expert_data: Dataset,
                          seeds: list[int], cfg: GailConfig) -> dict:
    """Finetune the same warm start with aligned vs random discriminators.

    For each seed both arms share the rollout seed and all hyperparameters;
    only the discriminator initialization differs. Reports per-seed retention
    ratios and how often the aligned arm retains at least as much.
    """
    base_return = policy_return(mdp, pretrained)
    report = {"base_return": base_return, "seeds": {}, "wins_stitched": 0}
    for seed in seeds:
        row = {}
        for arm in ("stitched", "random"):
            arm_cfg = replace(cfg, seed=seed, disc_init=arm)
            policy = TabularSoftmaxPolicy.from_policy(pretrained)
            disc = make_discriminator(arm_cfg, mdp.n_states, mdp.n_actions,
                                      stitched=stitched)
            _, _, curve = run_gail(mdp, policy, disc, expert_data, arm_cfg)
            row[arm] = retention_ratio(curve, base_return)
        row["stitched_wins"] = bool(row["stitched"] >= row["random"])
        report["wins_stitched"] += int(row["stitched_wins"])
        report["seeds"][str(seed)] = row
    report["n_seeds"] = len(seeds)
    return report


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
