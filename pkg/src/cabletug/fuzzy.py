"""Per-robot Mamdani-style fuzzy voltage controller and its genome codec.

Each robot maps four perceived features to one motor voltage through a fuzzy
inference system: three triangular membership functions per input, a complete
rule table over all 3^4 = 81 antecedent combinations, five triangular output
sets, min conjunction, and a firing-strength-weighted average of output-set
centroids.  Everything tunable is flattened into one per-fleet gene vector so
a genetic algorithm can evolve all robots simultaneously.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .sim_core import Features, WorldConfig

N_FEATURES = 4
N_INPUT_MFS = 3
N_OUTPUT_MFS = 5
N_RULES = N_INPUT_MFS ** N_FEATURES  # 81
POINTS_PER_INPUT = 5                 # a, b, c, d, e of one input partition
INPUT_GENES = N_FEATURES * POINTS_PER_INPUT   # 20
OUTPUT_GENES = 3 * N_OUTPUT_MFS               # 15
GENES_PER_ROBOT = INPUT_GENES + OUTPUT_GENES + N_RULES  # 116

VELOCITY_LIMIT = 0.5  # m/s, clamp bound for the two velocity features

COVERAGE_DELTA_FRACTION = 1e-3  # shoulder widening margin, fraction of domain width


class ZeroCoverageError(RuntimeError):
    """No rule fired: the input partitions left a membership gap."""


class CodecError(ValueError):
    """Genome length or segment structure does not match the fleet layout."""


@dataclass(frozen=True)
class TriangularMF:
    left: float
    peak: float
    right: float

    def __post_init__(self):
        if not (self.left <= self.peak <= self.right):
            raise CodecError(f"triangle vertices not sorted: {(self.left, self.peak, self.right)}")

    @property
    def centroid(self) -> float:
        return (self.left + self.peak + self.right) / 3.0


def mf_eval(mf: TriangularMF, x: float) -> float:
    """Membership degree in [0, 1]; degenerate triangles act as singletons."""
    if x < mf.left or x > mf.right:
        return 0.0
    if x == mf.peak:
        return 1.0
    if x < mf.peak:
        return (x - mf.left) / (mf.peak - mf.left)
    return (mf.right - x) / (mf.right - mf.peak)


@dataclass(frozen=True)
class InputPartition:
    """Three triangles over one input: shoulders at both extremes, one interior.

    The five tunable x-coordinates (a..e) realize mf1 = (x_min, x_min, a),
    mf2 = (b, c, d), mf3 = (e, x_max, x_max).
    """

    domain: tuple[float, float]
    a: float
    b: float
    c: float
    d: float
    e: float

    def __post_init__(self):
        x_min, x_max = self.domain
        if not x_min < x_max:
            raise CodecError(f"empty input domain {self.domain}")
        if not (x_min <= self.b <= self.c <= self.d <= x_max):
            raise CodecError(f"interior triangle not ordered in domain: {(self.b, self.c, self.d)}")
        if not (x_min < self.a <= x_max):
            raise CodecError(f"mf1 shoulder endpoint a={self.a} outside ({x_min}, {x_max}]")
        if not (x_min <= self.e < x_max):
            raise CodecError(f"mf3 shoulder endpoint e={self.e} outside [{x_min}, {x_max})")

    @cached_property
    def mfs(self) -> tuple[TriangularMF, TriangularMF, TriangularMF]:
        x_min, x_max = self.domain
        return (
            TriangularMF(x_min, x_min, self.a),
            TriangularMF(self.b, self.c, self.d),
            TriangularMF(self.e, x_max, x_max),
        )

    def membership(self, x: float) -> tuple[float, float, float]:
        """Degrees of a value clamped into the domain, one per MF."""
        x = min(max(x, self.domain[0]), self.domain[1])
        m = self.mfs
        return (mf_eval(m[0], x), mf_eval(m[1], x), mf_eval(m[2], x))


@dataclass(frozen=True)
class OutputPartition:
    """Five free triangles over the voltage domain [-v_max, +v_max]."""

    domain: tuple[float, float]
    triangles: tuple[TriangularMF, ...]

    def __post_init__(self):
        if len(self.triangles) != N_OUTPUT_MFS:
            raise CodecError(f"expected {N_OUTPUT_MFS} output triangles, got {len(self.triangles)}")

    @cached_property
    def centroids(self) -> np.ndarray:
        return np.array([t.centroid for t in self.triangles])


@dataclass(frozen=True)
class RuleBase:
    """Consequent output-set index for every antecedent combination.

    Rule r covers antecedents (i_rho, i_phi, i_vx, i_vy) with
    r = 27*i_rho + 9*i_phi + 3*i_vx + i_vy.
    """

    consequents: tuple[int, ...]

    def __post_init__(self):
        if len(self.consequents) != N_RULES:
            raise CodecError(f"expected {N_RULES} consequents, got {len(self.consequents)}")
        for q in self.consequents:
            if not 0 <= q < N_OUTPUT_MFS:
                raise CodecError(f"consequent {q} outside 0..{N_OUTPUT_MFS - 1}")


@dataclass(frozen=True)
class RobotFIS:
    inputs: tuple[InputPartition, InputPartition, InputPartition, InputPartition]
    output: OutputPartition
    rules: RuleBase

    @cached_property
    def rule_centroids(self) -> np.ndarray:
        """Centroid of each rule's consequent set, indexed by rule id."""
        cents = self.output.centroids
        arr = np.array([cents[q] for q in self.rules.consequents])
        arr.setflags(write=False)
        return arr


def feature_domains(cfg: WorldConfig) -> tuple[tuple[float, float], ...]:
    """Clamp ranges for (rho, phi, vbx, vby), derived from the world geometry."""
    r = 2.0 * cfg.anchor_radius
    return (
        (-r, r),
        (-math.pi, math.pi),
        (-VELOCITY_LIMIT, VELOCITY_LIMIT),
        (-VELOCITY_LIMIT, VELOCITY_LIMIT),
    )


def fuzzify(features: Features, fis: RobotFIS) -> np.ndarray:
    """(4, 3) membership degrees; out-of-domain inputs clamp to the edge."""
    vals = (features.rho, features.phi, features.vbx, features.vby)
    out = np.empty((N_FEATURES, N_INPUT_MFS))
    for f in range(N_FEATURES):
        out[f] = fis.inputs[f].membership(vals[f])
    return out


def infer(fis: RobotFIS, features: Features) -> float:
    """Crisp voltage from one robot's FIS, clamped to the voltage domain.

    Rule firing strength is the min of the four antecedent degrees; the output
    is the firing-strength-weighted average of consequent centroids.  The
    zero-weight skips below drop exact-zero terms only, so the accumulated
    sums match a full 81-rule sweep bit for bit.
    """
    degs = fuzzify(features, fis)
    cent = fis.rule_centroids
    num = 0.0
    den = 0.0
    for i0 in range(N_INPUT_MFS):
        d0 = degs[0, i0]
        if d0 == 0.0:
            continue
        for i1 in range(N_INPUT_MFS):
            d1 = degs[1, i1]
            w1 = d1 if d1 < d0 else d0
            if w1 == 0.0:
                continue
            for i2 in range(N_INPUT_MFS):
                d2 = degs[2, i2]
                w2 = d2 if d2 < w1 else w1
                if w2 == 0.0:
                    continue
                base = 27 * i0 + 9 * i1 + 3 * i2
                for i3 in range(N_INPUT_MFS):
                    d3 = degs[3, i3]
                    w = d3 if d3 < w2 else w2
                    if w > 0.0:
                        den += w
                        num += w * cent[base + i3]
    if den == 0.0:
        raise ZeroCoverageError("no rule fired; repair the genome before inference")
    lo, hi = fis.output.domain
    return min(max(num / den, lo), hi)


def genome_length(n_robots: int) -> int:
    return n_robots * GENES_PER_ROBOT


def integer_gene_mask(n_robots: int) -> np.ndarray:
    """True for consequent genes (categorical 0..4), False for real genes."""
    mask = np.zeros(genome_length(n_robots), dtype=bool)
    for r in range(n_robots):
        base = r * GENES_PER_ROBOT
        mask[base + INPUT_GENES + OUTPUT_GENES:base + GENES_PER_ROBOT] = True
    return mask


def gene_bounds(cfg: WorldConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-gene (lower, upper) arrays over the whole fleet genome."""
    doms = feature_domains(cfg)
    lower = np.empty(genome_length(cfg.n_robots))
    upper = np.empty(genome_length(cfg.n_robots))
    for r in range(cfg.n_robots):
        base = r * GENES_PER_ROBOT
        for f in range(N_FEATURES):
            lo, hi = doms[f]
            lower[base + f * POINTS_PER_INPUT:base + (f + 1) * POINTS_PER_INPUT] = lo
            upper[base + f * POINTS_PER_INPUT:base + (f + 1) * POINTS_PER_INPUT] = hi
        lower[base + INPUT_GENES:base + INPUT_GENES + OUTPUT_GENES] = -cfg.v_max
        upper[base + INPUT_GENES:base + INPUT_GENES + OUTPUT_GENES] = cfg.v_max
        lower[base + INPUT_GENES + OUTPUT_GENES:base + GENES_PER_ROBOT] = 0.0
        upper[base + INPUT_GENES + OUTPUT_GENES:base + GENES_PER_ROBOT] = float(N_OUTPUT_MFS - 1)
    return lower, upper


def decode(genome: Sequence[float], cfg: WorldConfig) -> list[RobotFIS]:
    """Genome -> fleet of controllers; raises CodecError on bad length/values."""
    g = np.asarray(genome, dtype=float)
    expected = genome_length(cfg.n_robots)
    if g.shape != (expected,):
        raise CodecError(f"expected fleet genome of length {expected}, got shape {g.shape}")
    doms = feature_domains(cfg)
    v_dom = (-cfg.v_max, cfg.v_max)
    fleet = []
    for r in range(cfg.n_robots):
        base = r * GENES_PER_ROBOT
        parts = []
        for f in range(N_FEATURES):
            p = g[base + f * POINTS_PER_INPUT:base + (f + 1) * POINTS_PER_INPUT]
            parts.append(InputPartition(doms[f], *map(float, p)))
        tri = []
        for m in range(N_OUTPUT_MFS):
            v = g[base + INPUT_GENES + 3 * m:base + INPUT_GENES + 3 * m + 3]
            tri.append(TriangularMF(*map(float, v)))
        cons = g[base + INPUT_GENES + OUTPUT_GENES:base + GENES_PER_ROBOT]
        rules = RuleBase(tuple(int(round(q)) for q in cons))
        fleet.append(RobotFIS(tuple(parts), OutputPartition(v_dom, tuple(tri)), rules))
    return fleet


def encode(fleet: Sequence[RobotFIS]) -> np.ndarray:
    """Fleet of controllers -> flat genome (inverse of decode)."""
    genome = np.empty(genome_length(len(fleet)))
    for r, fis in enumerate(fleet):
        base = r * GENES_PER_ROBOT
        for f, part in enumerate(fis.inputs):
            genome[base + f * POINTS_PER_INPUT:base + (f + 1) * POINTS_PER_INPUT] = (
                part.a, part.b, part.c, part.d, part.e)
        for m, tri in enumerate(fis.output.triangles):
            genome[base + INPUT_GENES + 3 * m:base + INPUT_GENES + 3 * m + 3] = (
                tri.left, tri.peak, tri.right)
        genome[base + INPUT_GENES + OUTPUT_GENES:base + GENES_PER_ROBOT] = fis.rules.consequents
    return genome


def repair(genome: Sequence[float], cfg: WorldConfig) -> np.ndarray:
    """Project an arbitrary gene vector onto the valid-genome set.

    Clamps reals into their domains, sorts triangle vertices, widens the
    shoulder sets just enough that every input value fires at least one rule,
    and snaps consequents to integers in range.  Idempotent.
    """
    g = np.array(genome, dtype=float, copy=True)
    expected = genome_length(cfg.n_robots)
    if g.shape != (expected,):
        raise CodecError(f"expected fleet genome of length {expected}, got shape {g.shape}")
    doms = feature_domains(cfg)
    for r in range(cfg.n_robots):
        base = r * GENES_PER_ROBOT
        for f in range(N_FEATURES):
            lo, hi = doms[f]
            delta = COVERAGE_DELTA_FRACTION * (hi - lo)
            s = base + f * POINTS_PER_INPUT
            seg = np.clip(g[s:s + POINTS_PER_INPUT], lo, hi)
            b, c, d = sorted(seg[1:4])
            a = min(max(seg[0], b + delta), hi)
            e = max(min(seg[4], d - delta), lo)
            g[s:s + POINTS_PER_INPUT] = (a, b, c, d, e)
        for m in range(N_OUTPUT_MFS):
            s = base + INPUT_GENES + 3 * m
            g[s:s + 3] = sorted(np.clip(g[s:s + 3], -cfg.v_max, cfg.v_max))
        s = base + INPUT_GENES + OUTPUT_GENES
        g[s:s + N_RULES] = np.clip(np.rint(g[s:s + N_RULES]), 0, N_OUTPUT_MFS - 1)
    return g


def fleet_kernel_arrays(fleet: Sequence[RobotFIS]) -> tuple[np.ndarray, np.ndarray,
                                                            np.ndarray, np.ndarray, float]:
    """Flatten a fleet into the plain arrays the compiled episode kernels take.

    Returns (in_tri (N,4,3,3), rule_centroids (N,81), feat_lo (4,),
    feat_hi (4,), v_limit).
    """
    n = len(fleet)
    in_tri = np.empty((n, N_FEATURES, N_INPUT_MFS, 3))
    rule_cent = np.empty((n, N_RULES))
    for r, fis in enumerate(fleet):
        for f, part in enumerate(fis.inputs):
            for m, tri in enumerate(part.mfs):
                in_tri[r, f, m] = (tri.left, tri.peak, tri.right)
        rule_cent[r] = fis.rule_centroids
    doms = [p.domain for p in fleet[0].inputs]
    feat_lo = np.array([d[0] for d in doms])
    feat_hi = np.array([d[1] for d in doms])
    return in_tri, rule_cent, feat_lo, feat_hi, fleet[0].output.domain[1]
