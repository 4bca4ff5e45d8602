"""Policy extraction from the solved occupancy correction.

Given the union distribution rho_o and the positive correction y from the
saddle-point solve, the target policy is pi(a|s) proportional to
rho_o(s, a) * y(s, a). Three equivalent routes are provided: the direct
closed form, forward-KL weighted behavior cloning (exact in tabular mode,
gradient-based for networks), and reverse-KL matching against the induced
unnormalized target. A plain behavior-cloning baseline and an exact occupancy
KL evaluator round out the module.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, EmpiricalDistribution
from .mdp import TabularMdp, TabularPolicy, stationary_distribution
from .nn import Adam, CategoricalPolicyNet, GaussianPolicyNet, Mlp

_METHODS = ("closed_form", "weighted_bc", "reverse_kl", "plain_bc")


@dataclass(frozen=True)
class ExtractionConfig:
    method: str = "closed_form"
    steps: int = 5000
    lr: float = 1e-4
    batch: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"method must be one of {_METHODS}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1 for gradient methods")


@dataclass(frozen=True)
class GaussianPolicy:
    """Continuous-action policy wrapper (tanh-squashed Gaussian head)."""

    head: GaussianPolicyNet

    def log_prob(self, states, actions):
        return self.head.log_prob(states, actions)[0]

    def sample(self, states, rng):
        return self.head.sample(states, rng)


def _uniform_fallback_rows(table: np.ndarray) -> np.ndarray:
    z = table.sum(axis=1, keepdims=True)
    n_actions = table.shape[1]
    with np.errstate(invalid="ignore", divide="ignore"):
        rows = np.where(z > 0, table / np.where(z > 0, z, 1.0), 1.0 / n_actions)
    return rows


def extract_policy_closed_form(rho_o: EmpiricalDistribution | np.ndarray,
                               y_star: np.ndarray) -> TabularPolicy:
    """pi(a|s) = rho_o(s, a) y(s, a) / z(s); uniform where z(s) = 0."""
    table = rho_o.probs if isinstance(rho_o, EmpiricalDistribution) else np.asarray(rho_o)
    y = np.asarray(y_star, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("y must be strictly positive")
    return TabularPolicy(_uniform_fallback_rows(table * y))


def extract_policy_weighted_bc(data: Dataset, y_star, policy=None,
                               cfg: ExtractionConfig = ExtractionConfig(method="weighted_bc"),
                               n_states: int | None = None,
                               n_actions: int | None = None):
    """Weighted behavior cloning: maximize E_data[y(s, a) log pi(a|s)].

    Weights are the raw y values, not renormalized per batch. With no policy
    network the exact tabular maximizer is returned: per-state weight-mass
    normalization, which coincides with the closed form when weights are
    y(s, a) (count(s, a) * y(s, a) is proportional to rho_o * y).
    """
    cols = data.as_arrays()
    y = np.asarray(y_star, dtype=np.float64)
    weights = y[cols["state"], cols["action"]]
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    if np.all(weights == 0):
        raise ValueError("all extraction weights are zero")
    if policy is None:
        if n_states is None:
            n_states = int(cols["state"].max()) + 1
        if n_actions is None:
            n_actions = int(cols["action"].max()) + 1
        mass = np.zeros((n_states, n_actions))
        np.add.at(mass, (cols["state"], cols["action"]), weights)
        return TabularPolicy(_uniform_fallback_rows(mass))
    return _train_weighted_likelihood(policy, cols, weights, cfg)


def _train_weighted_likelihood(policy: CategoricalPolicyNet, cols, weights,
                               cfg: ExtractionConfig):
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(policy.net, lr=cfg.lr)
    n = len(weights)
    for _ in range(cfg.steps):
        idx = rng.integers(n, size=min(cfg.batch, n))
        x = _one_hot(cols["state"][idx], policy.net.n_in)
        _, cache = policy.log_probs(x)
        grads = policy.log_prob_grads(cache, cols["action"][idx], weights[idx] / len(idx))
        opt.step([(-dw, -db) for dw, db in grads])  # ascend the likelihood
    return policy


def weighted_bc_continuous(features: np.ndarray, actions: np.ndarray,
                           weights: np.ndarray, policy: GaussianPolicy,
                           cfg: ExtractionConfig = ExtractionConfig(method="weighted_bc")):
    """Weighted behavior cloning for the continuous-action head."""
    if np.all(weights == 0):
        raise ValueError("all extraction weights are zero")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(policy.head.net, lr=cfg.lr)
    n = len(weights)
    for _ in range(cfg.steps):
        idx = rng.integers(n, size=min(cfg.batch, n))
        _, aux = policy.head.log_prob(features[idx], actions[idx])
        grads = policy.head.log_prob_grads(aux, weights[idx] / len(idx))
        opt.step([(-dw, -db) for dw, db in grads])
    return policy


def _one_hot(idx: np.ndarray, width: int) -> np.ndarray:
    x = np.zeros((len(idx), width))
    x[np.arange(len(idx)), idx] = 1.0
    return x


def extract_policy_reverse_kl(data: Dataset, q_table: np.ndarray,
                              policy=None,
                              cfg: ExtractionConfig = ExtractionConfig(method="reverse_kl"),
                              n_states: int | None = None):
    """Match pi(.|s) to q(s, .) / z(s) in reverse KL over states seen in data.

    Tabular mode returns the exact minimizer q / z row by row. The parametric
    path drops the partition term (constant in pi) and descends the sampled
    KL for a categorical head.
    """
    q = np.asarray(q_table, dtype=np.float64)
    if np.any(q < 0):
        raise ValueError("q must be nonnegative")
    cols = data.as_arrays()
    visited = np.unique(cols["state"])
    if np.any(q[visited].sum(axis=1) <= 0):
        bad = visited[q[visited].sum(axis=1) <= 0]
        raise ValueError(f"q vanishes at visited states {bad.tolist()}")
    if policy is None:
        return TabularPolicy(_uniform_fallback_rows(q))
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(policy.net, lr=cfg.lr)
    log_q = np.log(np.clip(q, 1e-300, None))
    for _ in range(cfg.steps):
        idx = rng.integers(len(cols["state"]), size=min(cfg.batch, len(cols["state"])))
        states = cols["state"][idx]
        x = _one_hot(states, policy.net.n_in)
        logp, cache = policy.log_probs(x)
        p = np.exp(logp)
        # KL(pi || q) gradient wrt logits: p * (log p - log q - E_p[log p - log q])
        diff = logp - log_q[states]
        upstream = p * (diff - (p * diff).sum(axis=1, keepdims=True)) / len(idx)
        grads = policy.net.backward(cache, upstream)
        opt.step(grads)  # descend the KL
    return policy


def plain_bc(data: Dataset, policy=None,
             cfg: ExtractionConfig = ExtractionConfig(method="plain_bc"),
             n_states: int | None = None, n_actions: int | None = None):
    """Behavior cloning on the expert-tagged subset (unit weights)."""
    expert = data.filter("e")
    if len(expert) == 0:
        raise ValueError("no expert transitions to clone")
    ones = np.ones((max(t.state for t in expert.transitions) + 1 if n_states is None else n_states,
                    max(t.action for t in expert.transitions) + 1 if n_actions is None else n_actions))
    return extract_policy_weighted_bc(expert, ones, policy=policy, cfg=cfg,
                                      n_states=ones.shape[0], n_actions=ones.shape[1])


def occupancy_divergence(mdp: TabularMdp, policy: TabularPolicy,
                         target: EmpiricalDistribution | np.ndarray) -> float:
    """Exact KL(rho_pi || target); +inf when the target misses rho_pi support."""
    t = target.probs if isinstance(target, EmpiricalDistribution) else np.asarray(target)
    rho = stationary_distribution(mdp, policy).rho
    mask = rho > 0
    if np.any(mask & (t <= 0)):
        return float("inf")
    return float(np.sum(rho[mask] * (np.log(rho[mask]) - np.log(t[mask]))))


def save_policy(path, policy) -> None:
    if isinstance(policy, TabularPolicy):
        doc = {"kind": "tabular", "probs": policy.probs.tolist()}
    elif isinstance(policy, CategoricalPolicyNet):
        doc = {"kind": "categorical_net", "net": policy.net.to_dict()}
    elif isinstance(policy, GaussianPolicy):
        doc = {"kind": "gaussian_net", "net": policy.head.net.to_dict(),
               "action_dim": policy.head.action_dim}
    else:
        raise TypeError(f"cannot serialize policy of type {type(policy).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_policy(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    kind = doc.get("kind")
    if kind == "tabular":
        return TabularPolicy(np.asarray(doc["probs"], dtype=np.float64))
    if kind == "categorical_net":
        return CategoricalPolicyNet(Mlp.from_dict(doc["net"]))
    if kind == "gaussian_net":
        return GaussianPolicy(GaussianPolicyNet(Mlp.from_dict(doc["net"]),
                                                doc["action_dim"]))
    raise ValueError(f"unknown policy kind {kind!r}")
