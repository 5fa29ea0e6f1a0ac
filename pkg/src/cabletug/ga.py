"""Mixed real/integer genetic algorithm over fleet genomes.

The engine is generic: a problem supplies per-gene bounds, an integer-gene
mask, an evaluation function, and a repair projection.  Selection is
tournament (lower cost wins), variation is uniform crossover plus Gaussian
mutation on real genes and random reset on integer genes, and elites carry
over unchanged.  Every generation the training champion is also scored on a
validation scenario set; the returned genome is the per-generation champion
with the smallest training-plus-validation cost.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels, fuzzy
from .sim_core import ConfigError, Scenario, WorldConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 30
    generations: int = 50
    tournament_size: int = 3
    crossover_rate: float = 0.9
    mutation_rate: float = 0.05
    mutation_sigma: float = 0.1      # fraction of each gene's domain width
    integer_reset_rate: float = 0.05
    elite_count: int = 2
    rng_seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ConfigError(f"population_size must be >= 2, got {self.population_size}")
        if not 0 <= self.elite_count < self.population_size:
            raise ConfigError(f"elite_count must be < population_size, got {self.elite_count}")
        if self.tournament_size < 1:
            raise ConfigError(f"tournament_size must be >= 1, got {self.tournament_size}")
        if self.generations < 1:
            raise ConfigError(f"generations must be >= 1, got {self.generations}")
        for name in ("crossover_rate", "mutation_rate", "integer_reset_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {getattr(self, name)}")
        if self.mutation_sigma < 0:
            raise ConfigError(f"mutation_sigma must be non-negative, got {self.mutation_sigma}")


@dataclass
class GenerationStats:
    generation: int
    best_cost: float
    mean_cost: float
    validation_cost: float
    wall_time: float


@dataclass(frozen=True)
class GAProblem:
    """Search-space description plus the cost function the GA minimizes."""

    lower: np.ndarray
    upper: np.ndarray
    integer_mask: np.ndarray
    evaluate: Callable[[np.ndarray, Sequence], float]
    evaluate_batch: Callable[[np.ndarray, Sequence], np.ndarray] | None = None
    repair: Callable[[np.ndarray], np.ndarray] | None = None

    @property
    def n_genes(self) -> int:
        return len(self.lower)

    def do_repair(self, genome: np.ndarray) -> np.ndarray:
        if self.repair is not None:
            return self.repair(genome)
        out = np.clip(genome, self.lower, self.upper)
        if self.integer_mask.any():
            out[self.integer_mask] = np.rint(out[self.integer_mask])
        return out


@dataclass
class GAResult:
    best_genome: np.ndarray
    history: list[GenerationStats]
    champions: list[np.ndarray]  # per-generation training champions


def init_population(problem: GAProblem, cfg: GAConfig,
                    rng: np.random.Generator | None = None) -> np.ndarray:
    """Seeded uniform sample of the gene box, repaired individual by individual."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    pop = rng.uniform(problem.lower, problem.upper,
                      (cfg.population_size, problem.n_genes))
    if problem.integer_mask.any():
        ilow = np.floor(problem.lower).astype(np.int64)
        ihigh = np.floor(problem.upper).astype(np.int64)
        ints = rng.integers(ilow, ihigh + 1, (cfg.population_size, problem.n_genes))
        pop[:, problem.integer_mask] = ints[:, problem.integer_mask]
    return np.array([problem.do_repair(g) for g in pop])


def _tournament_winner(fitnesses: np.ndarray, cfg: GAConfig,
                       rng: np.random.Generator) -> int:
    idx = rng.integers(0, len(fitnesses), size=cfg.tournament_size)
    best = int(idx[0])
    for j in idx[1:]:
        j = int(j)
        if fitnesses[j] < fitnesses[best] or (fitnesses[j] == fitnesses[best] and j < best):
            best = j
    return best


def ga_step(population: np.ndarray, fitnesses: np.ndarray, problem: GAProblem,
            cfg: GAConfig, rng: np.random.Generator) -> np.ndarray:
    """Produce the next generation: elites, tournaments, crossover, mutation."""
    pop_size, n_genes = population.shape
    order = np.argsort(fitnesses, kind="stable")
    nxt = [population[i].copy() for i in order[:cfg.elite_count]]

    sigma = cfg.mutation_sigma * (problem.upper - problem.lower)
    real_mask = ~problem.integer_mask
    has_ints = problem.integer_mask.any()
    if has_ints:
        ilow = np.floor(problem.lower).astype(np.int64)
        ihigh = np.floor(problem.upper).astype(np.int64)

    while len(nxt) < pop_size:
        p1 = population[_tournament_winner(fitnesses, cfg, rng)]
        p2 = population[_tournament_winner(fitnesses, cfg, rng)]
        child = p1.copy()
        if rng.random() < cfg.crossover_rate:
            take = rng.random(n_genes) < 0.5
            child[take] = p2[take]
        mutate = (rng.random(n_genes) < cfg.mutation_rate) & real_mask
        if mutate.any():
            child[mutate] += rng.normal(0.0, 1.0, int(mutate.sum())) * sigma[mutate]
        if has_ints:
            reset = (rng.random(n_genes) < cfg.integer_reset_rate) & problem.integer_mask
            if reset.any():
                child[reset] = rng.integers(ilow[reset], ihigh[reset] + 1)
        nxt.append(problem.do_repair(child))
    return np.array(nxt)


def _evaluate_population(problem: GAProblem, population: np.ndarray,
                         scenarios: Sequence) -> np.ndarray:
    if problem.evaluate_batch is not None:
        return np.asarray(problem.evaluate_batch(population, scenarios), dtype=float)
    return np.array([problem.evaluate(g, scenarios) for g in population])


def run(problem: GAProblem, train_scenarios: Sequence, val_scenarios: Sequence,
        cfg: GAConfig, on_generation: Callable[[GenerationStats], None] | None = None) -> GAResult:
    """Evolve for the configured generation count and pick the final champion.

    The champion of each generation gets a validation score; at the end the
    champion minimizing (training cost + validation cost) wins, earliest
    generation on ties.
    """
    if len(train_scenarios) == 0 or len(val_scenarios) == 0:
        raise ConfigError("training and validation scenario sets must be non-empty")
    rng = np.random.default_rng(cfg.rng_seed)
    pop = init_population(problem, cfg, rng)
    history: list[GenerationStats] = []
    champions: list[np.ndarray] = []
    for gen in range(cfg.generations):
        t0 = time.perf_counter()
        costs = _evaluate_population(problem, pop, train_scenarios)
        best_idx = int(np.argmin(costs))  # argmin takes the first occurrence on ties
        champion = pop[best_idx].copy()
        val_cost = float(problem.evaluate(champion, val_scenarios))
        stats = GenerationStats(
            generation=gen,
            best_cost=float(costs[best_idx]),
            mean_cost=float(np.mean(costs)),
            validation_cost=val_cost,
            wall_time=time.perf_counter() - t0,
        )
        history.append(stats)
        champions.append(champion)
        if on_generation is not None:
            on_generation(stats)
        if gen < cfg.generations - 1:
            pop = ga_step(pop, costs, problem, cfg, rng)

    totals = [h.best_cost + h.validation_cost for h in history]
    winner = int(np.argmin(totals))
    return GAResult(champions[winner].copy(), history, champions)


# ------------------------------------------------------------------ fleet wiring

def _kernel_args(world_cfg: WorldConfig):
    return (world_cfg.stiffness_k, world_cfg.natural_length_l0,
            world_cfg.object_mass_m, world_cfg.damping_c, world_cfg.reel_gain,
            world_cfg.v_max, world_cfg.ell_min, world_cfg.ell_max,
            world_cfg.break_length, world_cfg.dt, world_cfg.n_steps,
            world_cfg.horizon_T)


def evaluate_fleet(genome: np.ndarray, scenarios: Sequence[Scenario],
                   world_cfg: WorldConfig) -> float:
    """Mean episode cost of one decoded fleet over a scenario set.

    Pure and deterministic; simulator faults inside any episode score +inf
    instead of raising so one pathological genome cannot kill a run.
    """
    costs = evaluate_fleet_per_scenario(genome, scenarios, world_cfg)
    return float(np.mean(costs))


def evaluate_fleet_per_scenario(genome: np.ndarray, scenarios: Sequence[Scenario],
                                world_cfg: WorldConfig) -> np.ndarray:
    fleet = fuzzy.decode(genome, world_cfg)
    in_tri, rule_cent, feat_lo, feat_hi, v_limit = fuzzy.fleet_kernel_arrays(fleet)
    targets = np.array([s.target for s in scenarios], dtype=float)
    costs = _kernels.fis_scenario_costs(
        np.asarray(world_cfg.anchors, dtype=float), in_tri, rule_cent,
        feat_lo, feat_hi, v_limit, targets, *_kernel_args(world_cfg))
    if np.isinf(costs).any():
        log.warning("simulator fault in %d scenario(s); scored +inf",
                    int(np.isinf(costs).sum()))
    return costs


def _evaluate_fleet_batch(genomes: np.ndarray, scenarios: Sequence[Scenario],
                          world_cfg: WorldConfig) -> np.ndarray:
    n = world_cfg.n_robots
    pop = len(genomes)
    in_tri_pop = np.empty((pop, n, fuzzy.N_FEATURES, fuzzy.N_INPUT_MFS, 3))
    cent_pop = np.empty((pop, n, fuzzy.N_RULES))
    for p, genome in enumerate(genomes):
        fleet = fuzzy.decode(genome, world_cfg)
        in_tri_pop[p], cent_pop[p], feat_lo, feat_hi, v_limit = fuzzy.fleet_kernel_arrays(fleet)
    targets = np.array([s.target for s in scenarios], dtype=float)
    costs = _kernels.fis_population_costs(
        np.asarray(world_cfg.anchors, dtype=float), in_tri_pop, cent_pop,
        feat_lo, feat_hi, v_limit, targets, *_kernel_args(world_cfg))
    if np.isinf(costs).any():
        log.warning("simulator fault for %d genome(s); scored +inf",
                    int(np.isinf(costs).sum()))
    return costs


def make_fleet_problem(world_cfg: WorldConfig) -> GAProblem:
    """GAProblem over whole-fleet fuzzy genomes for the given world."""
    lower, upper = fuzzy.gene_bounds(world_cfg)
    return GAProblem(
        lower=lower,
        upper=upper,
        integer_mask=fuzzy.integer_gene_mask(world_cfg.n_robots),
        evaluate=lambda g, scen: evaluate_fleet(g, scen, world_cfg),
        evaluate_batch=lambda gs, scen: _evaluate_fleet_batch(gs, scen, world_cfg),
        repair=lambda g: fuzzy.repair(g, world_cfg),
    )
