"""Trajectory datasets with expert/supplementary provenance.

Transitions carry (s, a, s'), an episode-start flag, a source tag, and an
optional per-step reward. Datasets are immutable after creation; counting
operations are pure. The on-disk format is JSONL, one transition per line:

    {"s": 3, "a": 1, "sn": 4, "start": true, "src": "e"}

with an optional "r" field for reward-labelled data. Unknown keys are
rejected so schema drift fails loudly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .mdp import TabularMdp, TabularPolicy

EXPERT = "e"
SUPPLEMENTARY = "s"
_SOURCES = (EXPERT, SUPPLEMENTARY)
_SCHEMA_KEYS = {"s", "a", "sn", "start", "src", "r"}


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    next_state: int
    is_episode_start: bool
    source: str
    reward: float | None = None

    def __post_init__(self):
        if self.source not in _SOURCES:
            raise ValueError(f"source must be one of {_SOURCES}, got {self.source!r}")


@dataclass(frozen=True)
class Dataset:
    transitions: tuple[Transition, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))

    def __len__(self) -> int:
        return len(self.transitions)

    def filter(self, source: str | None) -> "Dataset":
        """Subset by provenance tag; None keeps everything."""
        if source is None:
            return self
        kept = tuple(t for t in self.transitions if t.source == source)
        return Dataset(kept, dict(self.metadata))

    def source_counts(self) -> dict[str, int]:
        counts = {EXPERT: 0, SUPPLEMENTARY: 0}
        for t in self.transitions:
            counts[t.source] += 1
        return counts

    def as_arrays(self) -> dict[str, np.ndarray]:
        """Column view for vectorized consumers."""
        n = len(self.transitions)
        out = {
            "state": np.fromiter((t.state for t in self.transitions), dtype=np.int64, count=n),
            "action": np.fromiter((t.action for t in self.transitions), dtype=np.int64, count=n),
            "next_state": np.fromiter((t.next_state for t in self.transitions), dtype=np.int64, count=n),
            "start": np.fromiter((t.is_episode_start for t in self.transitions), dtype=bool, count=n),
        }
        if n and self.transitions[0].reward is not None:
            out["reward"] = np.fromiter(
                (t.reward if t.reward is not None else np.nan for t in self.transitions),
                dtype=np.float64, count=n)
        return out


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Normalized state-action counts plus a mask of observed pairs."""

    probs: np.ndarray
    support_mask: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        p.setflags(write=False)
        m = np.asarray(self.support_mask, dtype=bool)
        m.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "support_mask", m)
        if p.shape != m.shape:
            raise ValueError("probs and support_mask shapes differ")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("empirical distribution must sum to 1")

    @staticmethod
    def from_table(table: np.ndarray) -> "EmpiricalDistribution":
        table = np.asarray(table, dtype=np.float64)
        return EmpiricalDistribution(table / table.sum(), table > 0)


# ---------------------------------------------------------------------------
# Generation and counting
# ---------------------------------------------------------------------------

def sample_trajectories(mdp: TabularMdp, policy: TabularPolicy, n_traj: int,
                        horizon: int, seed: int, source: str = SUPPLEMENTARY,
                        record_rewards: bool = False) -> Dataset:
    """Roll out seeded episodes: s0 ~ initial, actions from the policy."""
    if n_traj < 1 or horizon < 1:
        raise ValueError("n_traj and horizon must be >= 1")
    if source not in _SOURCES:
        raise ValueError(f"unknown source tag {source!r}")
    rng = np.random.default_rng(seed)
    transitions = []
    for _ in range(n_traj):
        s = int(rng.choice(mdp.n_states, p=mdp.initial))
        for h in range(horizon):
            a = int(rng.choice(mdp.n_actions, p=policy.probs[s]))
            sn = int(rng.choice(mdp.n_states, p=mdp.transition[s, a]))
            r = float(mdp.reward[s, a]) if record_rewards and mdp.reward is not None else None
            transitions.append(Transition(s, a, sn, h == 0, source, r))
            s = sn
    meta = {"seed": seed, "source_policy": source, "horizon": horizon, "n_traj": n_traj}
    return Dataset(tuple(transitions), meta)


def empirical_distribution(dataset: Dataset, source: str | None = None,
                           shape: tuple[int, int] | None = None,
                           smoothing: float = 0.0,
                           discount_weighted: bool = False,
                           discount: float | None = None) -> EmpiricalDistribution:
    """Normalized visit counts over (s, a), optionally filtered by provenance.

    Counts are plain (unweighted) by default. `discount_weighted` weights step
    h of each episode by discount**h instead. `smoothing` adds a constant to
    every cell before normalizing, guaranteeing full support (and hence finite
    log-ratios) at the cost of a small bias.
    """
    subset = dataset.filter(source)
    if len(subset) == 0:
        raise ValueError(f"no transitions with source {source!r}")
    if shape is None:
        cols = subset.as_arrays()
        shape = (int(cols["state"].max()) + 1, int(cols["action"].max()) + 1)
    counts = np.zeros(shape, dtype=np.float64)
    if discount_weighted:
        if discount is None:
            raise ValueError("discount_weighted counting needs a discount")
        w = 1.0
        for t in subset.transitions:
            if t.is_episode_start:
                w = 1.0
            counts[t.state, t.action] += w
            w *= discount
    else:
        cols = subset.as_arrays()
        np.add.at(counts, (cols["state"], cols["action"]), 1.0)
    mask = counts > 0
    if smoothing > 0.0:
        counts = counts + smoothing
    return EmpiricalDistribution(counts / counts.sum(), mask)


def merge_datasets(expert: Dataset, supp: Dataset) -> Dataset:
    """Union dataset: expert transitions followed by supplementary ones.

    Provenance tags are preserved, so the expert support is a subset of the
    union support by construction. An empty supplementary set is allowed.
    """
    if len(expert) and len(supp):
        if type(expert.transitions[0].state) is not type(supp.transitions[0].state):
            raise ValueError("datasets carry incompatible state kinds")
    meta = {"merged_from": [dict(expert.metadata), dict(supp.metadata)]}
    return Dataset(expert.transitions + supp.transitions, meta)


def estimate_initial_distribution(dataset: Dataset, n_states: int | None = None) -> np.ndarray:
    """Normalized counts over episode-start states."""
    starts = [t.state for t in dataset.transitions if t.is_episode_start]
    if not starts:
        raise ValueError("dataset has no transitions flagged as episode starts")
    if n_states is None:
        n_states = max(t.state for t in dataset.transitions) + 1
    counts = np.zeros(n_states)
    np.add.at(counts, np.asarray(starts), 1.0)
    return counts / counts.sum()


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

def write_dataset(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in dataset.transitions:
            doc = {"s": t.state, "a": t.action, "sn": t.next_state,
                   "start": t.is_episode_start, "src": t.source}
            if t.reward is not None:
                doc["r"] = t.reward
            fh.write(json.dumps(doc) + "\n")


def read_dataset(path) -> Dataset:
    transitions = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed JSON on line {lineno}: {exc}") from exc
            unknown = set(doc) - _SCHEMA_KEYS
            if unknown:
                raise ValueError(f"{path}: unknown keys {sorted(unknown)} on line {lineno}")
            try:
                transitions.append(Transition(
                    state=doc["s"], action=doc["a"], next_state=doc["sn"],
                    is_episode_start=bool(doc["start"]), source=doc["src"],
                    reward=doc.get("r")))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}: invalid transition on line {lineno}: {exc}") from exc
    if not transitions:
        raise ValueError(f"{path}: dataset file is empty")
    return Dataset(tuple(transitions), {"path": str(path)})
