import time

import numpy as np
import pytest

from o2oil.data import (Dataset, EmpiricalDistribution, Transition,
                        empirical_distribution, estimate_initial_distribution,
                        merge_datasets, read_dataset, sample_trajectories,
                        write_dataset)
from o2oil.mdp import TabularMdp, TabularPolicy, build_gridworld, value_iteration

from conftest import random_mdp, random_policy


def one_state_dataset(n=3):
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones(1), 0.9)
    return sample_trajectories(mdp, TabularPolicy(np.ones((1, 1))), 1, n, seed=0,
                               source="e")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_single_state_rollout_shape_and_start_flag():
    ds = one_state_dataset(3)
    assert len(ds) == 3
    assert all(t.state == 0 and t.action == 0 and t.next_state == 0
               for t in ds.transitions)
    flags = [t.is_episode_start for t in ds.transitions]
    assert flags == [True, False, False]


def test_deterministic_grid_expert_reaches_goal_immediately():
    mdp = build_gridworld(2, 1, goal=(1, 0), slip=0.0, step_penalty=-0.01)
    expert = value_iteration(mdp)
    ds = sample_trajectories(mdp, expert, 10, 4, seed=3, source="e")
    for t in ds.transitions:
        if t.is_episode_start:
            assert t.state == 0 and t.next_state == 1


def test_same_seed_gives_byte_identical_datasets(tmp_path):
    mdp = random_mdp(0, 4, 3, 0.9)
    pol = random_policy(1, 4, 3)
    a = sample_trajectories(mdp, pol, 5, 7, seed=11, source="s")
    b = sample_trajectories(mdp, pol, 5, 7, seed=11, source="s")
    pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_dataset(pa, a)
    write_dataset(pb, b)
    assert pa.read_bytes() == pb.read_bytes()


def test_sampling_validates_arguments():
    mdp = random_mdp(0)
    pol = random_policy(0, 3, 2)
    with pytest.raises(ValueError):
        sample_trajectories(mdp, pol, 0, 5, seed=0)
    with pytest.raises(ValueError):
        sample_trajectories(mdp, pol, 1, 5, seed=0, source="x")


# ---------------------------------------------------------------------------
# counting
# ---------------------------------------------------------------------------

def test_single_transition_distribution():
    ds = Dataset((Transition(0, 1, 0, True, "e"),))
    dist = empirical_distribution(ds, shape=(1, 2))
    assert dist.probs[0, 1] == 1.0
    assert dist.probs[0, 0] == 0.0
    assert dist.support_mask[0, 1]


def test_two_distinct_transitions_split_evenly():
    ds = Dataset((Transition(0, 0, 0, True, "e"), Transition(1, 1, 0, False, "e")))
    dist = empirical_distribution(ds, shape=(2, 2))
    assert dist.probs[0, 0] == pytest.approx(0.5)
    assert dist.probs[1, 1] == pytest.approx(0.5)


def test_long_rollout_matches_chain_frequency():
    mdp = random_mdp(5, 2, 2, 0.9)
    pol = random_policy(6, 2, 2)
    ds = sample_trajectories(mdp, pol, 1, 10_000, seed=7, source="s")
    dist = empirical_distribution(ds, shape=(2, 2))
    # exact undiscounted visitation frequency over the same horizon
    p = np.einsum("sa,sap->sp", pol.probs, mdp.transition)
    d = mdp.initial.copy()
    acc = np.zeros((2, 2))
    for _ in range(10_000):
        acc += d[:, None] * pol.probs
        d = p.T @ d
    acc /= acc.sum()
    assert np.abs(dist.probs - acc).sum() <= 0.05


def test_counting_is_order_invariant():
    rng = np.random.default_rng(0)
    ts = [Transition(int(rng.integers(3)), int(rng.integers(2)), 0, i == 0, "s")
          for i in range(50)]
    base = empirical_distribution(Dataset(tuple(ts)), shape=(3, 2))
    rng.shuffle(ts)
    ts[0] = Transition(ts[0].state, ts[0].action, ts[0].next_state, True, "s")
    shuffled = empirical_distribution(Dataset(tuple(ts)), shape=(3, 2))
    assert np.allclose(base.probs, shuffled.probs)


def test_empty_filter_errors():
    ds = one_state_dataset()
    with pytest.raises(ValueError):
        empirical_distribution(ds, source="s")


def test_smoothing_gives_full_support():
    ds = Dataset((Transition(0, 0, 0, True, "e"),))
    dist = empirical_distribution(ds, shape=(2, 2), smoothing=1e-6)
    assert np.all(dist.probs > 0)
    assert dist.support_mask.sum() == 1  # mask still marks observed pairs only


def test_discount_weighted_counting():
    ts = (Transition(0, 0, 1, True, "s"), Transition(1, 0, 0, False, "s"))
    dist = empirical_distribution(Dataset(ts), shape=(2, 1),
                                  discount_weighted=True, discount=0.5)
    assert dist.probs[0, 0] == pytest.approx(1 / 1.5)
    assert dist.probs[1, 0] == pytest.approx(0.5 / 1.5)


# ---------------------------------------------------------------------------
# merging
# ---------------------------------------------------------------------------

def test_merge_with_empty_supplement_is_identity():
    expert = one_state_dataset()
    merged = merge_datasets(expert, Dataset(()))
    assert merged.transitions == expert.transitions


def test_merge_sizes_add():
    a = one_state_dataset(3)
    b = Dataset(tuple(Transition(0, 0, 0, i == 0, "s") for i in range(5)))
    assert len(merge_datasets(a, b)) == 8


def test_merge_preserves_provenance_counts():
    a = one_state_dataset(3)
    b = Dataset(tuple(Transition(0, 0, 0, i == 0, "s") for i in range(5)))
    counts = merge_datasets(a, b).source_counts()
    assert counts == {"e": 3, "s": 5}


def test_expert_support_subset_of_union_support():
    rng = np.random.default_rng(1)
    for trial in range(100):
        mdp = random_mdp(int(rng.integers(1e6)), 3, 2, 0.9)
        expert = sample_trajectories(mdp, random_policy(trial, 3, 2), 2, 5,
                                     seed=trial, source="e")
        supp = sample_trajectories(mdp, random_policy(trial + 1, 3, 2), 2, 5,
                                   seed=trial + 1, source="s")
        union = merge_datasets(expert, supp)
        rho_e = empirical_distribution(union, source="e", shape=(3, 2))
        rho_o = empirical_distribution(union, shape=(3, 2))
        assert np.all(rho_o.support_mask[rho_e.support_mask])


# ---------------------------------------------------------------------------
# initial-state estimation
# ---------------------------------------------------------------------------

def test_all_starts_at_zero():
    ds = one_state_dataset()
    assert estimate_initial_distribution(ds, n_states=2).tolist() == [1.0, 0.0]


def test_split_starts():
    ts = (Transition(0, 0, 0, True, "s"), Transition(1, 0, 0, True, "s"),
          Transition(0, 0, 0, True, "s"), Transition(1, 0, 0, True, "s"))
    est = estimate_initial_distribution(Dataset(ts))
    assert est.tolist() == [0.5, 0.5]


def test_initial_estimate_concentrates():
    t = np.ones((2, 1, 2)) * 0.5
    mdp = TabularMdp(t, np.array([0.3, 0.7]), 0.9)
    ds = sample_trajectories(mdp, TabularPolicy(np.ones((2, 1))), 1000, 2, seed=9,
                             source="s")
    est = estimate_initial_distribution(ds, n_states=2)
    assert np.abs(est - np.array([0.3, 0.7])).max() <= 0.05


def test_no_starts_errors():
    ds = Dataset((Transition(0, 0, 0, False, "s"),))
    with pytest.raises(ValueError):
        estimate_initial_distribution(ds)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_round_trip_identity(tmp_path):
    mdp = random_mdp(0, 4, 3, 0.9)
    ds = sample_trajectories(mdp, random_policy(1, 4, 3), 3, 6, seed=2, source="e",
                             record_rewards=True)
    path = tmp_path / "data.jsonl"
    write_dataset(path, ds)
    back = read_dataset(path)
    assert back.transitions == ds.transitions


def test_empty_file_errors(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    with pytest.raises(ValueError):
        read_dataset(path)


def test_malformed_line_names_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"s": 0, "a": 0, "sn": 0, "start": true, "src": "e"}\nnot json\n')
    with pytest.raises(ValueError, match="line 2"):
        read_dataset(path)


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "extra.jsonl"
    path.write_text('{"s": 0, "a": 0, "sn": 0, "start": true, "src": "e", "zzz": 1}\n')
    with pytest.raises(ValueError, match="zzz"):
        read_dataset(path)


def test_large_file_reads_quickly(tmp_path):
    n = 100_000
    ts = tuple(Transition(0, 0, 0, i == 0, "s") for i in range(n))
    path = tmp_path / "big.jsonl"
    write_dataset(path, Dataset(ts))
    t0 = time.perf_counter()
    back = read_dataset(path)
    elapsed = time.perf_counter() - t0
    assert len(back) == n
    assert elapsed < 2.0


def test_empirical_distribution_validation():
    with pytest.raises(ValueError):
        EmpiricalDistribution(np.array([[0.5, 0.6]]), np.array([[True, True]]))
