"""Per-robot tabular Q-learning with shared rewards, plus table distillation.

Each robot keeps its own Q-table over discretized features and a small set of
discrete voltage actions.  All robots act simultaneously every step, receive
the one shared reward (how much closer the object got to the target), and
update only their own table.  A trained table is flattened into a
(state-bin-center features, best-action voltage) dataset and distilled into a
small continuous regressor so evaluation is not limited to grid states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels, fuzzy, mlp
from .sim_core import ConfigError, Features, Scenario, WorldConfig

MASK64 = (1 << 64) - 1


class EmptyDatasetError(ValueError):
    """The Q-table holds nothing to extract, so distillation is impossible."""


class SplitMix64:
    """Deterministic 64-bit PRNG; bit-identical twin of the kernel's stream."""

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_double(self) -> float:
        self._state = (self._state + 0x9E3779B97F4A7C15) & MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        z ^= z >> 31
        return (z >> 11) * 2.0 ** -53


@dataclass(frozen=True)
class QLearnConfig:
    alpha: float = 0.1
    gamma: float = 0.95
    episodes: int = 5000
    epsilon_start: float = 0.5
    epsilon_end: float = 0.05
    bins: tuple[int, int, int, int] = (9, 9, 5, 5)
    action_levels: tuple[float, ...] = (-12.0, -6.0, 0.0, 6.0, 12.0)
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.episodes < 0:
            raise ConfigError(f"episodes must be non-negative, got {self.episodes}")
        if len(self.bins) != 4 or any(b < 2 for b in self.bins):
            raise ConfigError(f"need four bin counts >= 2, got {self.bins}")
        if not self.action_levels:
            raise ConfigError("action_levels must be non-empty")
        for e in (self.epsilon_start, self.epsilon_end):
            if not 0.0 <= e <= 1.0:
                raise ConfigError(f"exploration probabilities must lie in [0, 1], got {e}")

    @property
    def n_actions(self) -> int:
        return len(self.action_levels)


@dataclass(frozen=True)
class Discretizer:
    """Uniform binning of the four features into one mixed-radix state id."""

    lows: tuple[float, float, float, float]
    highs: tuple[float, float, float, float]
    bins: tuple[int, int, int, int]

    @classmethod
    def from_world(cls, cfg: WorldConfig, bins: Sequence[int]) -> "Discretizer":
        doms = fuzzy.feature_domains(cfg)
        return cls(tuple(d[0] for d in doms), tuple(d[1] for d in doms), tuple(bins))

    @property
    def n_states(self) -> int:
        return int(np.prod(self.bins))

    def bin_index(self, feature: int, x: float) -> int:
        lo, hi = self.lows[feature], self.highs[feature]
        x = min(max(x, lo), hi)
        b = int((x - lo) / (hi - lo) * self.bins[feature])
        return min(b, self.bins[feature] - 1)

    def state_id(self, features: Features | Sequence[float]) -> int:
        if isinstance(features, Features):
            vals = (features.rho, features.phi, features.vbx, features.vby)
        else:
            vals = tuple(features)
        s = 0
        for f in range(4):
            s = s * self.bins[f] + self.bin_index(f, vals[f])
        return s

    def bin_centers(self, state_id: int) -> np.ndarray:
        """Feature-space center of a state's bin cell."""
        if not 0 <= state_id < self.n_states:
            raise ConfigError(f"state id {state_id} out of range 0..{self.n_states - 1}")
        idx = np.empty(4, dtype=int)
        s = state_id
        for f in (3, 2, 1, 0):
            idx[f] = s % self.bins[f]
            s //= self.bins[f]
        out = np.empty(4)
        for f in range(4):
            width = (self.highs[f] - self.lows[f]) / self.bins[f]
            out[f] = self.lows[f] + (idx[f] + 0.5) * width
        return out


class QTable:
    """Sparse (state, action) -> value store; absent entries read as zero."""

    def __init__(self):
        self._values: dict[tuple[int, int], float] = {}

    def __len__(self) -> int:
        return len(self._values)

    def get(self, state: int, action: int) -> float:
        return self._values.get((state, action), 0.0)

    def set(self, state: int, action: int, value: float) -> None:
        if not math.isfinite(value):
            raise ConfigError(f"refusing to store non-finite Q value {value}")
        self._values[(state, action)] = value

    def items(self):
        return self._values.items()

    def visited_states(self) -> list[int]:
        return sorted({s for s, _ in self._values})

    def max_value(self, state: int, n_actions: int) -> float:
        return max(self.get(state, a) for a in range(n_actions))

    def greedy_action(self, state: int, n_actions: int) -> int:
        """Argmax action; ties resolve to the lowest action id."""
        best = 0
        best_q = self.get(state, 0)
        for a in range(1, n_actions):
            q = self.get(state, a)
            if q > best_q:
                best, best_q = a, q
        return best


def reward(dist_t: float, dist_t_plus_1: float) -> float:
    """Positive when the object moved closer to the target this step."""
    return dist_t - dist_t_plus_1


def q_update(table: QTable, s_t: int, a_t: int, r_t: float, s_next: int,
             cfg: QLearnConfig) -> QTable:
    """One temporal-difference update; mutates and returns the table."""
    target = r_t + cfg.gamma * table.max_value(s_next, cfg.n_actions)
    table.set(s_t, a_t, (1.0 - cfg.alpha) * table.get(s_t, a_t) + cfg.alpha * target)
    return table


def epsilon_for_episode(cfg: QLearnConfig, episode: int) -> float:
    """Linear decay from epsilon_start to epsilon_end across the episode count."""
    if cfg.episodes <= 1:
        return cfg.epsilon_start
    frac = episode / (cfg.episodes - 1)
    return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac


def epsilon_greedy_action(table: QTable, state: int, n_actions: int,
                          epsilon: float, rng: SplitMix64) -> int:
    """Explore uniformly with probability epsilon, otherwise act greedily."""
    if rng.next_double() < epsilon:
        return int(rng.next_double() * n_actions)
    return table.greedy_action(state, n_actions)


def train_fleet(cfg: QLearnConfig, scenarios: Sequence[Scenario],
                world_cfg: WorldConfig) -> list[QTable]:
    """Populate one Q-table per robot over the training scenario cycle.

    Every episode cycles to the next scenario; within an episode all robots
    pick epsilon-greedy actions from their own tables, the joint step yields
    one shared reward, and every robot updates its own (state, action) entry.
    """
    if not scenarios:
        raise ConfigError("need at least one training scenario")
    for a in cfg.action_levels:
        if abs(a) > world_cfg.v_max:
            raise ConfigError(f"action level {a} exceeds v_max={world_cfg.v_max}")
    for s in scenarios:
        if math.hypot(*s.target) >= world_cfg.anchor_radius:
            raise ConfigError(f"target {s.target} outside the robot ring")

    disc = Discretizer.from_world(world_cfg, cfg.bins)
    targets = np.array([s.target for s in scenarios], dtype=float)
    q, visited, faults = _kernels.q_train_dense(
        np.asarray(world_cfg.anchors, dtype=float),
        np.array(disc.lows), np.array(disc.highs),
        np.array(disc.bins, dtype=np.int64),
        np.array(cfg.action_levels, dtype=float),
        targets, cfg.episodes, cfg.alpha, cfg.gamma,
        cfg.epsilon_start, cfg.epsilon_end, np.uint64(cfg.rng_seed & MASK64),
        world_cfg.stiffness_k, world_cfg.natural_length_l0,
        world_cfg.object_mass_m, world_cfg.damping_c, world_cfg.reel_gain,
        world_cfg.v_max, world_cfg.ell_min, world_cfg.ell_max,
        world_cfg.break_length, world_cfg.dt, world_cfg.n_steps)
    if faults:
        print(f"q-learning: {faults} episode(s) aborted on degenerate geometry")

    tables = []
    for i in range(world_cfg.n_robots):
        table = QTable()
        states, actions = np.nonzero(visited[i])
        for s, a in zip(states.tolist(), actions.tolist()):
            table.set(int(s), int(a), float(q[i, s, a]))
        tables.append(table)
    return tables


def table_occupancy(table: QTable, disc: Discretizer) -> float:
    """Fraction of discrete states with at least one stored action."""
    return len(table.visited_states()) / disc.n_states


@dataclass
class DistillationDataset:
    """(bin-center features, best-action voltage) rows, one per visited state."""

    features: np.ndarray   # (M, 4)
    voltages: np.ndarray   # (M,)
    state_ids: np.ndarray  # (M,)

    def __len__(self) -> int:
        return len(self.state_ids)


def extract_dataset(table: QTable, disc: Discretizer,
                    action_levels: Sequence[float]) -> DistillationDataset:
    """Greedy-policy dataset of a table: argmax voltage at every visited state."""
    states = table.visited_states()
    if not states:
        raise EmptyDatasetError("Q-table is empty; nothing to distill")
    n_actions = len(action_levels)
    feats = np.empty((len(states), 4))
    volts = np.empty(len(states))
    for row, s in enumerate(states):
        feats[row] = disc.bin_centers(s)
        volts[row] = action_levels[table.greedy_action(s, n_actions)]
    return DistillationDataset(feats, volts, np.array(states, dtype=int))


def distill(dataset: DistillationDataset,
            cfg: mlp.TrainConfig = mlp.TrainConfig()) -> tuple[mlp.MLPParams, list[float]]:
    """Fit the continuous voltage regressor to a table's greedy policy."""
    if len(dataset) < 10:
        raise EmptyDatasetError(
            f"distillation needs at least 10 dataset rows, got {len(dataset)}")
    cfg = mlp.distill_config(len(dataset), cfg)
    return mlp.train(dataset.features, dataset.voltages, cfg)


def chain_mdp_selftest(episodes: int = 500, alpha: float = 0.5, gamma: float = 0.9,
                       epsilon: float = 0.5, seed: int = 7) -> bool:
    """Sanity-check the update rule on a 5-state deterministic chain.

    Reward 1 lands on entering the right terminal state; the greedy policy
    after training must match a value-iteration solution in every
    non-terminal state.
    """
    n_states, terminal = 5, 4
    cfg = QLearnConfig(alpha=alpha, gamma=gamma, episodes=episodes,
                       epsilon_start=epsilon, epsilon_end=epsilon,
                       bins=(2, 2, 2, 2), action_levels=(-1.0, 1.0), rng_seed=seed)
    table = QTable()
    rng = SplitMix64(seed)
    for _ in range(episodes):
        s = 0
        for _ in range(50):
            a = epsilon_greedy_action(table, s, 2, epsilon, rng)
            s2 = min(s + 1, terminal) if a == 1 else max(s - 1, 0)
            r = 1.0 if s2 == terminal else 0.0
            q_update(table, s, a, r, s2, cfg)
            s = s2
            if s == terminal:
                break

    q_star = np.zeros((n_states, 2))
    for _ in range(200):
        nxt = q_star.copy()
        for s in range(terminal):
            for a, s2 in ((0, max(s - 1, 0)), (1, min(s + 1, terminal))):
                r = 1.0 if s2 == terminal else 0.0
                v_next = 0.0 if s2 == terminal else q_star[s2].max()
                nxt[s, a] = r + gamma * v_next
        q_star = nxt
    oracle_policy = [int(np.argmax(q_star[s])) for s in range(terminal)]
    learned_policy = [table.greedy_action(s, 2) for s in range(terminal)]
    return learned_policy == oracle_policy
