"""On-disk formats: scenario suites, trained models, and atomic writes.

Everything is plain JSON or CSV so regression fixtures stay human-diffable.
Every artifact embeds the world-config fingerprint and the master seed that
produced it, which is enough to regenerate the file bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import fuzzy, mlp
from ..sim_core import ConfigError, Scenario, WorldConfig, world_config_from_dict

SCENARIO_FORMAT = "cabletug-scenarios/1"
MODEL_FORMAT = "cabletug-model/1"

METHOD_GFS = "gfs"
METHOD_QMLP = "qmlp"


class ModelFormatError(ValueError):
    """Version, method, or fleet-size mismatch while loading an artifact."""


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def world_fingerprint(cfg: WorldConfig) -> str:
    """Short stable hash of the world constants."""
    canon = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


# ------------------------------------------------------------------ scenarios

@dataclass
class ScenarioSet:
    scenarios: list[Scenario]
    role: str          # training | validation | test
    seed: int
    r_max: float

    def __len__(self) -> int:
        return len(self.scenarios)


def gen_scenarios(n: int, r_max: float, seed: int, role: str = "test",
                  anchor_radius: float | None = None) -> ScenarioSet:
    """Targets uniform over the disc of radius r_max (polar sqrt sampling)."""
    if n < 1:
        raise ConfigError(f"scenario count must be >= 1, got {n}")
    if r_max <= 0:
        raise ConfigError(f"r_max must be positive, got {r_max}")
    if anchor_radius is not None and r_max >= anchor_radius:
        raise ConfigError(
            f"r_max={r_max} must stay inside the robot ring radius {anchor_radius}")
    rng = np.random.default_rng(seed)
    scenarios = []
    for _ in range(n):
        radius = r_max * math.sqrt(rng.uniform())
        theta = rng.uniform(0.0, 2.0 * math.pi)
        scenarios.append(Scenario((radius * math.cos(theta), radius * math.sin(theta))))
    return ScenarioSet(scenarios, role, seed, r_max)


def save_scenarios(path: str, sset: ScenarioSet) -> None:
    doc = {
        "format": SCENARIO_FORMAT,
        "role": sset.role,
        "seed": sset.seed,
        "r_max": sset.r_max,
        "count": len(sset),
        "targets": [[t for t in s.target] for s in sset.scenarios],
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_scenarios(path: str) -> ScenarioSet:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != SCENARIO_FORMAT:
        raise ModelFormatError(
            f"{path}: expected format {SCENARIO_FORMAT}, got {doc.get('format')!r}")
    targets = doc["targets"]
    if len(targets) != doc["count"]:
        raise ModelFormatError(f"{path}: count field disagrees with target list")
    return ScenarioSet([Scenario((float(t[0]), float(t[1]))) for t in targets],
                       doc["role"], int(doc["seed"]), float(doc["r_max"]))


# ------------------------------------------------------------------ models

@dataclass
class LoadedModel:
    method: str
    world: WorldConfig
    seed: int
    fingerprint: str
    genome: np.ndarray | None = None               # gfs
    regressors: list[mlp.MLPParams] | None = None  # qmlp
    qtable_rows: list[list[tuple[int, int, float]]] | None = None
    extras: dict | None = None

    @property
    def n_robots(self) -> int:
        return self.world.n_robots


def _header(method: str, world: WorldConfig, seed: int) -> dict:
    return {
        "format": MODEL_FORMAT,
        "method": method,
        "n_robots": world.n_robots,
        "world_fingerprint": world_fingerprint(world),
        "seed": seed,
        "world": world.to_dict(),
    }


def save_gfs_model(path: str, genome: np.ndarray, world: WorldConfig, seed: int,
                   extras: dict | None = None) -> None:
    """Persist a fuzzy fleet: per robot 20 input reals, 15 output reals, 81 ints."""
    fleet = fuzzy.decode(genome, world)  # validates before anything hits disk
    doc = _header(METHOD_GFS, world, seed)
    robots = []
    for fis in fleet:
        input_points = []
        for part in fis.inputs:
            input_points.extend([part.a, part.b, part.c, part.d, part.e])
        output_vertices = []
        for tri in fis.output.triangles:
            output_vertices.extend([tri.left, tri.peak, tri.right])
        robots.append({
            "input_points": input_points,
            "output_vertices": output_vertices,
            "consequents": list(fis.rules.consequents),
        })
    doc["robots"] = robots
    if extras:
        doc["extras"] = extras
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def save_qmlp_model(path: str, regressors: Sequence[mlp.MLPParams], world: WorldConfig,
                    seed: int, extras: dict | None = None,
                    qtables: Sequence[Sequence[tuple[int, int, float]]] | None = None) -> None:
    """Persist distilled regressors (and optionally the raw Q-table rows)."""
    doc = _header(METHOD_QMLP, world, seed)
    robots = []
    for params in regressors:
        robots.append({
            "mean": params.mean.tolist(),
            "scale": params.scale.tolist(),
            "w1": params.w1.tolist(),   # row-major nested lists
            "b1": params.b1.tolist(),
            "w2": params.w2.tolist(),
            "b2": params.b2,
        })
    doc["robots"] = robots
    if qtables is not None:
        doc["qtables"] = [[[int(s), int(a), float(q)] for s, a, q in rows]
                          for rows in qtables]
    if extras:
        doc["extras"] = extras
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_model(path: str, expect_world: WorldConfig | None = None) -> LoadedModel:
    """Load either model kind; rejects version and fleet-size mismatches."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(
            f"{path}: expected format {MODEL_FORMAT}, got {doc.get('format')!r}")
    method = doc.get("method")
    if method not in (METHOD_GFS, METHOD_QMLP):
        raise ModelFormatError(f"{path}: unknown method tag {method!r}")
    world = world_config_from_dict(doc["world"])
    if doc["n_robots"] != world.n_robots:
        raise ModelFormatError(f"{path}: header n_robots disagrees with world config")
    if expect_world is not None and expect_world.n_robots != world.n_robots:
        raise ModelFormatError(
            f"{path}: model is for N={world.n_robots} robots, "
            f"world expects N={expect_world.n_robots}")
    robots = doc["robots"]
    if len(robots) != world.n_robots:
        raise ModelFormatError(
            f"{path}: {len(robots)} robot blocks for N={world.n_robots}")

    model = LoadedModel(
        method=method,
        world=world,
        seed=int(doc["seed"]),
        fingerprint=str(doc["world_fingerprint"]),
        extras=doc.get("extras"),
    )
    if model.fingerprint != world_fingerprint(world):
        raise ModelFormatError(f"{path}: world fingerprint does not match world body")
    if method == METHOD_GFS:
        genome = []
        for block in robots:
            if (len(block["input_points"]) != fuzzy.INPUT_GENES
                    or len(block["output_vertices"]) != fuzzy.OUTPUT_GENES
                    or len(block["consequents"]) != fuzzy.N_RULES):
                raise ModelFormatError(f"{path}: robot block has wrong segment sizes")
            genome.extend(block["input_points"])
            genome.extend(block["output_vertices"])
            genome.extend(block["consequents"])
        model.genome = np.array(genome, dtype=float)
        fuzzy.decode(model.genome, world)  # validate
    else:
        regs = []
        for block in robots:
            params = mlp.MLPParams(
                w1=np.array(block["w1"], dtype=float),
                b1=np.array(block["b1"], dtype=float),
                w2=np.array(block["w2"], dtype=float),
                b2=float(block["b2"]),
                mean=np.array(block["mean"], dtype=float),
                scale=np.array(block["scale"], dtype=float),
            )
            if params.w1.shape[1] != 4 or (params.scale <= 0).any():
                raise ModelFormatError(f"{path}: malformed regressor block")
            regs.append(params)
        model.regressors = regs
        if "qtables" in doc:
            model.qtable_rows = [[(int(s), int(a), float(q)) for s, a, q in rows]
                                 for rows in doc["qtables"]]
    return model


def build_controllers(model: LoadedModel):
    """Feature -> voltage callables for every robot, ready for run_episode."""
    world = model.world
    if model.method == METHOD_GFS:
        fleet = fuzzy.decode(model.genome, world)
        return [lambda f, fis=fis: fuzzy.infer(fis, f) for fis in fleet]
    v_max = world.v_max

    def make(params):
        def ctrl(f):
            v = mlp.forward(params, (f.rho, f.phi, f.vbx, f.vby))
            return min(max(v, -v_max), v_max)
        return ctrl

    return [make(p) for p in model.regressors]
