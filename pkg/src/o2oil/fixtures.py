"""Seeded benchmark fixtures: tiny random MDPs with population distributions.

Twenty discounted fixtures (2-5 states, 2-3 actions, gamma in {0.9, 0.99})
plus five undiscounted ones ship as JSON under fixtures/. Each carries a full
MDP (random Dirichlet dynamics, uniform-random rewards) and two full-support
population distributions: an expert one from a softened optimal policy and a
union one mixing expert with uniform behavior. Regression tests solve the
dual on these and compare against the brute-force primal.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .data import EmpiricalDistribution
from .mdp import (TabularMdp, TabularPolicy, average_state_action_frequency,
                  stationary_distribution, value_iteration)

DISCOUNTED_IDS = tuple(f"f{i:02d}" for i in range(20))
UNDISCOUNTED_IDS = tuple(f"u{i:02d}" for i in range(5))


@dataclass(frozen=True)
class Fixture:
    fixture_id: str
    mdp: TabularMdp
    rho_e: EmpiricalDistribution
    rho_o: EmpiricalDistribution

    @property
    def undiscounted(self) -> bool:
        return self.mdp.discount >= 1.0


def _random_mdp(rng: np.random.Generator, n_states: int, n_actions: int,
                discount: float) -> TabularMdp:
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    initial = rng.dirichlet(np.ones(n_states))
    reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(transition=transition, initial=initial,
                      discount=discount, reward=reward)


def _occupancy(mdp: TabularMdp, policy: TabularPolicy) -> np.ndarray:
    if mdp.discount < 1.0:
        return stationary_distribution(mdp, policy).rho
    return average_state_action_frequency(mdp, policy).rho


def build_fixture(fixture_id: str, seed: int, n_states: int, n_actions: int,
                  discount: float, expert_softening: float = 0.1,
                  expert_mix: float = 0.3, noise_scale: float = 0.4) -> Fixture:
    rng = np.random.default_rng(seed)
    mdp = _random_mdp(rng, n_states, n_actions, discount)
    greedy = value_iteration(mdp if discount < 1.0 else
                             TabularMdp(mdp.transition, mdp.initial, 0.95, mdp.reward))
    soft = TabularPolicy((1 - expert_softening) * greedy.probs
                         + expert_softening / n_actions)
    uniform = TabularPolicy.uniform(n_states, n_actions)
    # lognormal perturbation keeps full support but makes rho_e infeasible as
    # an occupancy, so the projection the solvers compute is nontrivial.
    rho_e = _occupancy(mdp, soft) * np.exp(noise_scale * rng.standard_normal((n_states, n_actions)))
    rho_e /= rho_e.sum()
    rho_b = _occupancy(mdp, uniform)
    rho_o = expert_mix * rho_e + (1 - expert_mix) * rho_b
    return Fixture(fixture_id=fixture_id, mdp=mdp,
                   rho_e=EmpiricalDistribution.from_table(rho_e),
                   rho_o=EmpiricalDistribution.from_table(rho_o))


def standard_fixture_specs():
    """(id, seed, n_states, n_actions, gamma) for the shipped suite."""
    sizes = [(2, 2), (3, 2), (5, 2), (3, 3), (5, 3)]
    specs = []
    for i in range(20):
        n_states, n_actions = sizes[i % len(sizes)]
        gamma = 0.9 if (i // len(sizes)) % 2 == 0 else 0.99
        specs.append((f"f{i:02d}", 1000 + i, n_states, n_actions, gamma))
    for i in range(5):
        n_states, n_actions = sizes[i % 2 + 1]
        specs.append((f"u{i:02d}", 2000 + i, n_states, n_actions, 1.0))
    return specs


def fixture_to_json(f: Fixture) -> str:
    return json.dumps({
        "fixture_id": f.fixture_id,
        "mdp": json.loads(f.mdp.to_json()),
        "rho_e": f.rho_e.probs.tolist(),
        "rho_o": f.rho_o.probs.tolist(),
    })


def fixture_from_json(text: str) -> Fixture:
    doc = json.loads(text)
    return Fixture(
        fixture_id=doc["fixture_id"],
        mdp=TabularMdp.from_json(json.dumps(doc["mdp"])),
        rho_e=EmpiricalDistribution.from_table(np.asarray(doc["rho_e"])),
        rho_o=EmpiricalDistribution.from_table(np.asarray(doc["rho_o"])),
    )


def load_fixture(fixture_id: str) -> Fixture:
    ref = resources.files("o2oil") / "fixtures" / f"{fixture_id}.json"
    return fixture_from_json(ref.read_text(encoding="utf-8"))


def load_all(undiscounted: bool = False) -> list[Fixture]:
    ids = UNDISCOUNTED_IDS if undiscounted else DISCOUNTED_IDS
    return [load_fixture(fid) for fid in ids]
