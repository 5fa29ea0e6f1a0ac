import math

import numpy as np
import pytest

from cabletug import mlp, qlearn
from cabletug.qlearn import (
    Discretizer,
    DistillationDataset,
    EmptyDatasetError,
    QLearnConfig,
    QTable,
    SplitMix64,
    chain_mdp_selftest,
    distill,
    epsilon_greedy_action,
    extract_dataset,
    q_update,
    reward,
    train_fleet,
)
from cabletug.sim_core import ConfigError, Scenario, world_preset


@pytest.fixture(scope="module")
def cfg():
    return world_preset("default")


@pytest.fixture(scope="module")
def disc(cfg):
    return Discretizer.from_world(cfg, (9, 9, 5, 5))


# ---------------------------------------------------------------- discretizer

def test_discretize_center_bin(disc):
    assert disc.bin_index(0, 0.0) == 4          # rho = 0, 9 bins on [-3, 3]


def test_discretize_clamps_below_domain(disc):
    assert disc.bin_index(0, -99.0) == 0
    assert disc.bin_index(1, 99.0) == 8


def test_discretize_state_space_size(disc):
    assert disc.n_states == 9 * 9 * 5 * 5 == 2025
    ids = [disc.state_id([rho, phi, vx, vy])
           for rho in (-3.0, 0.0, 2.9) for phi in (-3.0, 0.0, 3.0)
           for vx in (-0.5, 0.4) for vy in (-0.5, 0.4)]
    assert all(0 <= s < 2025 for s in ids)
    assert disc.state_id([3.0, math.pi, 0.5, 0.5]) == 2024
    assert disc.state_id([-3.0, -math.pi, -0.5, -0.5]) == 0


def test_bin_centers_round_trip(disc):
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = int(rng.integers(disc.n_states))
        assert disc.state_id(disc.bin_centers(s)) == s


def test_bin_centers_rejects_bad_id(disc):
    with pytest.raises(ConfigError):
        disc.bin_centers(disc.n_states)


# ---------------------------------------------------------------- reward / update

def test_reward_examples():
    assert reward(0.5, 0.4) == pytest.approx(0.1)
    assert reward(0.4, 0.6) == pytest.approx(-0.2)
    assert reward(0.3, 0.3) == 0.0


def test_q_update_degenerate_alpha_one_gamma_zero():
    cfg = QLearnConfig(alpha=1.0, gamma=0.0)
    table = QTable()
    table.set(3, 1, 5.0)
    q_update(table, 3, 1, 0.25, 7, cfg)
    assert table.get(3, 1) == pytest.approx(0.25)


def test_q_update_hand_arithmetic():
    cfg = QLearnConfig(alpha=0.5, gamma=0.9)
    table = QTable()
    table.set(0, 0, 1.0)
    table.set(1, 2, 2.0)
    q_update(table, 0, 0, 1.0, 1, cfg)
    assert table.get(0, 0) == pytest.approx(0.5 * 1.0 + 0.5 * (1.0 + 0.9 * 2.0))


def test_q_update_zero_fixed_point():
    cfg = QLearnConfig(alpha=0.3, gamma=0.8)
    table = QTable()
    q_update(table, 5, 2, 0.0, 6, cfg)
    assert table.get(5, 2) == 0.0


def test_q_table_missing_reads_zero():
    table = QTable()
    assert table.get(123, 4) == 0.0
    assert table.max_value(123, 5) == 0.0
    table.set(9, 3, -2.0)  # with all stored values negative, the max is an unstored 0
    assert table.max_value(9, 5) == 0.0


def test_q_table_rejects_non_finite():
    with pytest.raises(ConfigError):
        QTable().set(0, 0, float("inf"))


# ---------------------------------------------------------------- exploration

def test_epsilon_schedule_linear():
    cfg = QLearnConfig(episodes=5, epsilon_start=1.0, epsilon_end=0.0)
    eps = [qlearn.epsilon_for_episode(cfg, e) for e in range(5)]
    assert eps == pytest.approx([1.0, 0.75, 0.5, 0.25, 0.0])
    one = QLearnConfig(episodes=1, epsilon_start=0.7)
    assert qlearn.epsilon_for_episode(one, 0) == 0.7


def test_pure_exploration_matches_seeded_sampler():
    # with eps = 1 the action stream must equal the raw splitmix64 stream
    table = QTable()
    rng = SplitMix64(99)
    actions = [epsilon_greedy_action(table, 0, 5, 1.0, rng) for _ in range(500)]
    mirror = SplitMix64(99)
    expected = []
    for _ in range(500):
        assert mirror.next_double() < 1.0
        expected.append(int(mirror.next_double() * 5))
    assert actions == expected
    assert set(actions) == {0, 1, 2, 3, 4}


def test_greedy_tie_breaks_to_lowest_action():
    table = QTable()
    table.set(0, 0, 0.5)
    table.set(0, 2, 0.5)
    assert table.greedy_action(0, 5) == 0
    table.set(0, 1, 0.7)
    assert table.greedy_action(0, 5) == 1


# ---------------------------------------------------------------- chain MDP oracle

def value_iteration_chain(gamma, terminal=4, sweeps=300):
    """Independent oracle: Q* for the 5-state deterministic chain."""
    q = np.zeros((terminal + 1, 2))
    for _ in range(sweeps):
        new = np.zeros_like(q)
        for s in range(terminal):
            for a, s2 in ((0, max(s - 1, 0)), (1, min(s + 1, terminal))):
                r = 1.0 if s2 == terminal else 0.0
                v2 = 0.0 if s2 == terminal else q[s2].max()
                new[s, a] = r + gamma * v2
        q = new
    return q


def test_chain_policy_matches_value_iteration():
    gamma, alpha = 0.9, 0.5
    cfg = QLearnConfig(alpha=alpha, gamma=gamma, episodes=500,
                       epsilon_start=0.5, epsilon_end=0.5,
                       bins=(2, 2, 2, 2), action_levels=(-1.0, 1.0), rng_seed=3)
    table = QTable()
    rng = SplitMix64(3)
    for _ in range(500):
        s = 0
        for _ in range(50):
            a = epsilon_greedy_action(table, s, 2, 0.5, rng)
            s2 = min(s + 1, 4) if a == 1 else max(s - 1, 0)
            q_update(table, s, a, 1.0 if s2 == 4 else 0.0, s2, cfg)
            s = s2
            if s == 4:
                break
    q_star = value_iteration_chain(gamma)
    for s in range(4):
        assert table.greedy_action(s, 2) == int(np.argmax(q_star[s])) == 1
    # learned values should approximate Q* where visits are plentiful
    assert table.get(3, 1) == pytest.approx(q_star[3, 1], abs=0.05)


def test_chain_selftest_helper():
    assert chain_mdp_selftest()


# ---------------------------------------------------------------- training

@pytest.fixture(scope="module")
def tiny_training(cfg):
    qcfg = QLearnConfig(episodes=40, bins=(5, 5, 3, 3),
                        action_levels=(-12.0, 0.0, 12.0), rng_seed=11)
    short = world_preset("default", horizon_T=2.0)
    scenarios = [Scenario((0.25, 0.0)), Scenario((-0.1, 0.2))]
    tables = train_fleet(qcfg, scenarios, short)
    return qcfg, short, scenarios, tables


def test_train_fleet_zero_episodes(cfg):
    qcfg = QLearnConfig(episodes=0)
    tables = train_fleet(qcfg, [Scenario((0.2, 0.0))], world_preset("default", horizon_T=1.0))
    assert all(len(t) == 0 for t in tables)


def test_train_fleet_populates_tables(tiny_training):
    qcfg, short, scenarios, tables = tiny_training
    assert len(tables) == short.n_robots
    for t in tables:
        assert len(t) > 0
        for (_, a), v in t.items():
            assert 0 <= a < qcfg.n_actions
            assert math.isfinite(v)


def test_train_fleet_deterministic(tiny_training):
    qcfg, short, scenarios, tables = tiny_training
    again = train_fleet(qcfg, scenarios, short)
    for t1, t2 in zip(tables, again):
        assert dict(t1.items()) == dict(t2.items())


def test_train_fleet_rejects_bad_inputs(cfg):
    with pytest.raises(ConfigError):
        train_fleet(QLearnConfig(), [], cfg)
    with pytest.raises(ConfigError):
        train_fleet(QLearnConfig(action_levels=(-99.0,)), [Scenario((0.1, 0.0))], cfg)
    with pytest.raises(ConfigError):
        train_fleet(QLearnConfig(), [Scenario((5.0, 0.0))], cfg)


def test_reward_telescoping(cfg):
    # sum of per-step rewards must equal dist(0) - dist(t_end) to fp precision
    from cabletug.sim_core import run_episode

    rng = np.random.default_rng(2)
    controllers = [lambda f: 6.0, lambda f: -3.0, lambda f: 2.0]
    short = world_preset("default", horizon_T=4.0)
    traj = run_episode(controllers, Scenario((0.2, -0.15)), short)
    rewards = [reward(traj.dists[k], traj.dists[k + 1]) for k in range(len(traj) - 1)]
    assert abs(sum(rewards) - (traj.dists[0] - traj.dists[-1])) < 1e-9


# ---------------------------------------------------------------- extraction

def test_extract_dataset_argmax_and_ties(disc):
    table = QTable()
    table.set(10, 0, 0.2)
    table.set(10, 1, 0.7)
    table.set(20, 0, 0.5)
    table.set(20, 2, 0.5)
    levels = (-12.0, -6.0, 0.0, 6.0, 12.0)
    ds = extract_dataset(table, disc, levels)
    assert len(ds) == 2
    assert list(ds.state_ids) == [10, 20]
    assert ds.voltages[0] == -6.0   # argmax a1
    assert ds.voltages[1] == -12.0  # tie -> lowest action id
    assert ds.features[0] == pytest.approx(disc.bin_centers(10))


def test_extract_dataset_row_count(tiny_training):
    qcfg, short, scenarios, tables = tiny_training
    d = Discretizer.from_world(short, qcfg.bins)
    ds = extract_dataset(tables[0], d, qcfg.action_levels)
    assert len(ds) == len(tables[0].visited_states())


def test_extract_empty_table_errors(disc):
    with pytest.raises(EmptyDatasetError):
        extract_dataset(QTable(), disc, (-1.0, 1.0))


# ---------------------------------------------------------------- distillation

def test_distill_requires_min_rows(disc):
    ds = DistillationDataset(np.zeros((4, 4)), np.zeros(4), np.arange(4))
    with pytest.raises(EmptyDatasetError):
        distill(ds)


def test_distill_constant_action(disc):
    rng = np.random.default_rng(1)
    feats = rng.uniform(-1, 1, (40, 4))
    ds = DistillationDataset(feats, np.full(40, 6.0), np.arange(40))
    params, history = distill(ds, mlp.TrainConfig(learning_rate=0.1, epochs=300,
                                                  init_scale=0.02, rng_seed=2))
    for x in rng.uniform(-1, 1, (30, 4)):
        assert mlp.forward(params, x) == pytest.approx(6.0, abs=1e-2)


def test_distill_chain_policy_round_trip():
    # train on the chain, embed states as rho-bin centers, distill, and check
    # the net reproduces the argmax voltage at >= 90% of the bin centers
    gamma, alpha = 0.9, 0.5
    cfg = QLearnConfig(alpha=alpha, gamma=gamma, episodes=500,
                       epsilon_start=0.5, epsilon_end=0.5,
                       bins=(5, 2, 2, 2), action_levels=(-6.0, 6.0), rng_seed=5)
    table = QTable()
    rng = SplitMix64(5)
    for _ in range(500):
        s = 0
        for _ in range(50):
            a = epsilon_greedy_action(table, s, 2, 0.5, rng)
            s2 = min(s + 1, 4) if a == 1 else max(s - 1, 0)
            q_update(table, s, a, 1.0 if s2 == 4 else 0.0, s2, cfg)
            s = s2
            if s == 4:
                break
    disc5 = Discretizer((-3.0, -math.pi, -0.5, -0.5), (3.0, math.pi, 0.5, 0.5),
                        (5, 1, 1, 1))
    feats = np.vstack([disc5.bin_centers(s) for s in range(4)])
    volts = np.array([cfg.action_levels[table.greedy_action(s, 2)] for s in range(4)])
    ds = DistillationDataset(np.tile(feats, (5, 1)), np.tile(volts, 5),
                             np.tile(np.arange(4), 5))
    params, _ = distill(ds, mlp.TrainConfig(learning_rate=0.05, epochs=400, rng_seed=3))
    spacing = 12.0  # min action gap
    hits = sum(abs(mlp.forward(params, feats[s]) - volts[s]) <= 0.5 * spacing
               for s in range(4))
    assert hits >= math.ceil(0.9 * 4)


# ---------------------------------------------------------------- config

def test_qlearn_config_validation():
    with pytest.raises(ConfigError):
        QLearnConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        QLearnConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        QLearnConfig(bins=(1, 9, 5, 5))
    with pytest.raises(ConfigError):
        QLearnConfig(action_levels=())
    with pytest.raises(ConfigError):
        QLearnConfig(epsilon_start=1.5)
