"""2-D physics of an object hauled by N stationary cable-reeling robots.

The object (a point mass) sits inside a ring of robots fixed at the vertices
of a regular polygon.  Each robot controls the free (unstretched) length of
an elastic cable tied to the object by applying a motor voltage; a taut cable
pulls the object toward its anchor with a linear spring force, a slack cable
transmits nothing.  Episodes integrate the object's motion with semi-implicit
Euler until the time horizon runs out or a cable is stretched past its break
length.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources
from typing import Callable, Sequence

import numpy as np

ANCHOR_EPS = 1e-9  # below this distance to an anchor, unit vectors are undefined

TERMINATED_HORIZON = "horizon"
TERMINATED_CABLE_BREAK = "cable_break"


class ConfigError(ValueError):
    """Raised for physically or numerically inconsistent configuration."""


class DegenerateGeometryError(RuntimeError):
    """Raised when the object coincides with an anchor (or a target does)."""


class ControllerFaultError(RuntimeError):
    """Raised when a controller emits a non-finite voltage."""

    def __init__(self, robot_index: int, value: float):
        self.robot_index = robot_index
        self.value = value
        super().__init__(f"controller for robot {robot_index} returned non-finite voltage {value!r}")


@dataclass(frozen=True)
class WorldConfig:
    """Physical and numerical constants of the N-robot cable world."""

    n_robots: int
    anchor_radius: float        # m, distance of each robot from the origin
    stiffness_k: float          # N/m, cable spring constant
    natural_length_l0: float    # m, initial free cable length
    object_mass_m: float        # kg
    damping_c: float            # N*s/m, viscous coefficient on the object velocity
    reel_gain: float            # m/(V*s), voltage -> free-length rate
    v_max: float                # V, |voltage| bound
    ell_min: float              # m, lower free-length clamp
    ell_max: float              # m, upper free-length clamp
    break_length: float         # m, stretched length beyond which a cable breaks
    dt: float                   # s, integration step
    horizon_T: float            # s, episode time limit
    success_eps: float          # m, distance tolerance for settling
    success_hold: float         # s, time the object must stay within success_eps

    def __post_init__(self):
        if self.n_robots < 2:
            raise ConfigError(f"need at least 2 robots, got {self.n_robots}")
        for name in ("anchor_radius", "stiffness_k", "natural_length_l0", "object_mass_m",
                     "reel_gain", "v_max", "ell_min", "ell_max", "break_length",
                     "dt", "horizon_T", "success_eps", "success_hold"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if self.damping_c < 0:
            raise ConfigError(f"damping_c must be non-negative, got {self.damping_c}")
        if not self.ell_min < self.natural_length_l0 <= self.ell_max:
            raise ConfigError(
                f"need ell_min < natural_length_l0 <= ell_max, got "
                f"{self.ell_min} / {self.natural_length_l0} / {self.ell_max}")
        if self.dt > self.horizon_T:
            raise ConfigError(f"dt={self.dt} exceeds horizon_T={self.horizon_T}")

    @cached_property
    def anchors(self) -> np.ndarray:
        """(N, 2) anchor positions; read-only."""
        pts = regular_polygon_anchors(self.n_robots, self.anchor_radius)
        pts.setflags(write=False)
        return pts

    @property
    def n_steps(self) -> int:
        """Number of integration steps in a full-horizon episode."""
        return int(round(self.horizon_T / self.dt))

    def to_dict(self) -> dict:
        return {
            "n_robots": self.n_robots,
            "anchor_radius": self.anchor_radius,
            "stiffness_k": self.stiffness_k,
            "natural_length_l0": self.natural_length_l0,
            "object_mass_m": self.object_mass_m,
            "damping_c": self.damping_c,
            "reel_gain": self.reel_gain,
            "v_max": self.v_max,
            "ell_min": self.ell_min,
            "ell_max": self.ell_max,
            "break_length": self.break_length,
            "dt": self.dt,
            "horizon_T": self.horizon_T,
            "success_eps": self.success_eps,
            "success_hold": self.success_hold,
        }


def world_config_from_dict(data: dict, **overrides) -> WorldConfig:
    """Build a WorldConfig from a JSON-style dict, applying keyword overrides."""
    merged = dict(data)
    merged.update(overrides)
    known = set(WorldConfig.__dataclass_fields__)
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown world config keys: {sorted(unknown)}")
    missing = known - set(merged)
    if missing:
        raise ConfigError(f"missing world config keys: {sorted(missing)}")
    return WorldConfig(**merged)


def world_preset(name: str, **overrides) -> WorldConfig:
    """Load a packaged world preset ('default' or 'paper-text') by name."""
    fname = name.replace("-", "_") + ".json"
    try:
        text = resources.files("cabletug.presets").joinpath(fname).read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown world preset {name!r}") from None
    return world_config_from_dict(json.loads(text), **overrides)


@dataclass
class ObjectState:
    """Planar position and velocity of the hauled object."""

    position: np.ndarray
    velocity: np.ndarray

    def copy(self) -> "ObjectState":
        return ObjectState(self.position.copy(), self.velocity.copy())


@dataclass
class CableState:
    """Free (unstretched) deployed length of every cable, robot-indexed."""

    free_lengths: np.ndarray

    def copy(self) -> "CableState":
        return CableState(self.free_lengths.copy())


@dataclass
class WorldState:
    obj: ObjectState
    cables: CableState

    def copy(self) -> "WorldState":
        return WorldState(self.obj.copy(), self.cables.copy())


@dataclass(frozen=True)
class Scenario:
    """A single task: haul the object from the origin to `target`."""

    target: tuple[float, float]


@dataclass(frozen=True)
class Features:
    """What one robot perceives: no other robot's state ever appears here."""

    rho: float   # m, |robot->object| - |robot->target|
    phi: float   # rad in (-pi, pi], signed angle from robot->target to robot->object
    vbx: float   # m/s, object velocity x
    vby: float   # m/s, object velocity y

    def as_array(self) -> np.ndarray:
        return np.array([self.rho, self.phi, self.vbx, self.vby])


Controller = Callable[[Features], float]


@dataclass
class Trajectory:
    """Per-step record of one episode, stored column-wise."""

    times: np.ndarray         # (M,)
    positions: np.ndarray     # (M, 2)
    velocities: np.ndarray    # (M, 2)
    dists: np.ndarray         # (M,) distance object->target
    voltages: np.ndarray      # (M, N) commands issued at each recorded state
    free_lengths: np.ndarray  # (M, N)
    t_end: float
    terminated_by: str        # TERMINATED_HORIZON or TERMINATED_CABLE_BREAK

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class EpisodeOutcome:
    cost: float
    settle_time: float | None
    success: bool
    t_end: float
    terminated_by: str


def regular_polygon_anchors(n: int, radius: float) -> np.ndarray:
    """Vertices of a regular n-gon of circumradius `radius`, vertex 0 on +x."""
    if n < 2:
        raise ConfigError(f"need at least 2 anchors, got {n}")
    if radius <= 0:
        raise ConfigError(f"anchor radius must be positive, got {radius}")
    pts = np.empty((n, 2))
    for k in range(n):
        theta = 2.0 * math.pi * k / n
        pts[k, 0] = radius * math.cos(theta)
        pts[k, 1] = radius * math.sin(theta)
    return pts


def cable_tension(distance_d: float, free_length_ell: float, stiffness_k: float) -> float:
    """Spring tension of one cable; zero whenever the cable is slack (d <= ell)."""
    stretch = distance_d - free_length_ell
    if stretch > 0.0:
        return stiffness_k * stretch
    return 0.0


def initial_state(cfg: WorldConfig) -> WorldState:
    """Object at the origin at rest, every free length at the natural length."""
    return WorldState(
        ObjectState(np.zeros(2), np.zeros(2)),
        CableState(np.full(cfg.n_robots, cfg.natural_length_l0)),
    )


def _net_cable_force(px: float, py: float, free_lengths: np.ndarray,
                     anchors: np.ndarray, stiffness_k: float) -> tuple[float, float]:
    # Scalar loop on purpose: the batched training kernels mirror this exact
    # operation order, which keeps the two paths numerically identical.
    fx = 0.0
    fy = 0.0
    for i in range(anchors.shape[0]):
        dx = anchors[i, 0] - px
        dy = anchors[i, 1] - py
        d = math.sqrt(dx * dx + dy * dy)
        if d < ANCHOR_EPS:
            raise DegenerateGeometryError(
                f"object within {ANCHOR_EPS} m of anchor {i}; pull direction undefined")
        stretch = d - free_lengths[i]
        if stretch > 0.0:
            t = stiffness_k * stretch
            fx += t * dx / d
            fy += t * dy / d
    return fx, fy


def object_acceleration(obj: ObjectState, cables: CableState, cfg: WorldConfig) -> np.ndarray:
    """(sum of taut-cable pulls - damping_c * velocity) / mass."""
    fx, fy = _net_cable_force(obj.position[0], obj.position[1],
                              cables.free_lengths, cfg.anchors, cfg.stiffness_k)
    ax = (fx - cfg.damping_c * obj.velocity[0]) / cfg.object_mass_m
    ay = (fy - cfg.damping_c * obj.velocity[1]) / cfg.object_mass_m
    return np.array([ax, ay])


def step(state: WorldState, voltages: Sequence[float], cfg: WorldConfig) -> WorldState:
    """Advance one dt: reel the cables, then semi-implicit Euler on the object.

    Positive voltage reels in (shortens the free length).  Voltages beyond
    +/-v_max are clamped, never rejected.
    """
    nxt = state.copy()
    ells = nxt.cables.free_lengths
    for i in range(cfg.n_robots):
        v = min(max(float(voltages[i]), -cfg.v_max), cfg.v_max)
        ell = ells[i] - cfg.reel_gain * v * cfg.dt
        ells[i] = min(max(ell, cfg.ell_min), cfg.ell_max)
    acc = object_acceleration(nxt.obj, nxt.cables, cfg)
    nxt.obj.velocity[0] += acc[0] * cfg.dt
    nxt.obj.velocity[1] += acc[1] * cfg.dt
    nxt.obj.position[0] += nxt.obj.velocity[0] * cfg.dt
    nxt.obj.position[1] += nxt.obj.velocity[1] * cfg.dt
    return nxt


def perceive(state: WorldState, scenario: Scenario, robot_index: int,
             cfg: WorldConfig) -> Features:
    """Egocentric features of one robot; the decentralization boundary.

    rho is positive when the object lies farther from this robot than the
    target does; phi is the counterclockwise-positive angle from the
    robot->target ray to the robot->object ray.
    """
    if not 0 <= robot_index < cfg.n_robots:
        raise ConfigError(f"robot index {robot_index} out of range for N={cfg.n_robots}")
    ax = cfg.anchors[robot_index, 0]
    ay = cfg.anchors[robot_index, 1]
    bx = state.obj.position[0] - ax
    by = state.obj.position[1] - ay
    tx = scenario.target[0] - ax
    ty = scenario.target[1] - ay
    nb = math.sqrt(bx * bx + by * by)
    nt = math.sqrt(tx * tx + ty * ty)
    if nb < ANCHOR_EPS or nt < ANCHOR_EPS:
        raise DegenerateGeometryError(
            f"object or target coincides with anchor {robot_index}")
    rho = nb - nt
    phi = math.atan2(tx * by - ty * bx, tx * bx + ty * by)
    if phi <= -math.pi:
        phi = math.pi
    return Features(rho, phi, float(state.obj.velocity[0]), float(state.obj.velocity[1]))


def _cable_distances(state: WorldState, cfg: WorldConfig) -> np.ndarray:
    diff = cfg.anchors - state.obj.position
    return np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2)


def run_episode(controllers: Sequence[Controller], scenario: Scenario,
                cfg: WorldConfig) -> Trajectory:
    """Run one full episode under per-robot controllers.

    Each controller sees only its own Features each step, honoring the
    no-communication contract.  Terminates at the horizon or as soon as any
    cable's stretched length exceeds the break length; the terminal state is
    recorded either way.
    """
    n = cfg.n_robots
    if len(controllers) != n:
        raise ConfigError(f"expected {n} controllers, got {len(controllers)}")
    if math.hypot(*scenario.target) >= cfg.anchor_radius:
        raise ConfigError(f"target {scenario.target} outside the robot ring")

    n_steps = cfg.n_steps
    state = initial_state(cfg)
    times, positions, velocities, dists = [], [], [], []
    volt_hist, ell_hist = [], []
    terminated = TERMINATED_HORIZON
    k = 0
    while True:
        volts = np.empty(n)
        for i in range(n):
            feats = perceive(state, scenario, i, cfg)
            v = float(controllers[i](feats))
            if not math.isfinite(v):
                raise ControllerFaultError(i, v)
            volts[i] = v
        times.append(k * cfg.dt)
        positions.append(state.obj.position.copy())
        velocities.append(state.obj.velocity.copy())
        ddx = scenario.target[0] - state.obj.position[0]
        ddy = scenario.target[1] - state.obj.position[1]
        dists.append(math.sqrt(ddx * ddx + ddy * ddy))
        volt_hist.append(volts)
        ell_hist.append(state.cables.free_lengths.copy())

        if np.any(_cable_distances(state, cfg) > cfg.break_length):
            terminated = TERMINATED_CABLE_BREAK
            break
        if k >= n_steps:
            break
        state = step(state, volts, cfg)
        k += 1

    return Trajectory(
        times=np.array(times),
        positions=np.array(positions),
        velocities=np.array(velocities),
        dists=np.array(dists),
        voltages=np.array(volt_hist),
        free_lengths=np.array(ell_hist),
        t_end=k * cfg.dt,
        terminated_by=terminated,
    )


def episode_cost(traj: Trajectory, cfg: WorldConfig) -> float:
    """Trapezoidal integral of the target distance plus 50 per second of early stop."""
    if len(traj) == 0:
        raise ConfigError("cannot cost an empty trajectory")
    integral = float(np.trapezoid(traj.dists, traj.times))
    return integral + 50.0 * (cfg.horizon_T - traj.t_end)


def settle_and_success(traj: Trajectory, cfg: WorldConfig) -> tuple[float | None, bool]:
    """Earliest time after which the object stays inside success_eps, and success.

    The inside-tolerance tail must last at least success_hold seconds; an
    episode that ended in a cable break can never succeed.
    """
    if len(traj) == 0:
        raise ConfigError("cannot judge an empty trajectory")
    inside = traj.dists <= cfg.success_eps
    settle_time = None
    if inside[-1]:
        outside = np.nonzero(~inside)[0]
        start = 0 if outside.size == 0 else int(outside[-1]) + 1
        t_star = float(traj.times[start])
        if traj.t_end - t_star >= cfg.success_hold - 1e-9:
            settle_time = t_star
    success = settle_time is not None and traj.terminated_by == TERMINATED_HORIZON
    return settle_time, success


def summarize_episode(traj: Trajectory, cfg: WorldConfig) -> EpisodeOutcome:
    settle_time, success = settle_and_success(traj, cfg)
    return EpisodeOutcome(
        cost=episode_cost(traj, cfg),
        settle_time=settle_time,
        success=success,
        t_end=traj.t_end,
        terminated_by=traj.terminated_by,
    )
