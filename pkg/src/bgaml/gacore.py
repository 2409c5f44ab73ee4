"""Genetic algorithm over phase-duration chromosomes.

A chromosome is the flat integer vector [p11..p1K, p21..p2K, ...] of phase
durations in seconds, controller by controller. Every operator keeps each
controller's durations summing to its cycle length.
"""

from __future__ import annotations

import csv
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .netmodel import NetworkSpec

DEFAULT_PENALTY = 1e6


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named sub-stream of one run seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


@dataclass(frozen=True)
class Layout:
    """Per-controller (offset, number of phases, cycle length) in the chromosome."""

    blocks: tuple[tuple[int, int, int], ...]

    @classmethod
    def of(cls, network: NetworkSpec) -> "Layout":
        blocks, offset = [], 0
        for c in network.controllers:
            blocks.append((offset, c.num_phases, c.cycle_length))
            offset += c.num_phases
        return cls(tuple(blocks))

    @property
    def n_genes(self) -> int:
        return sum(k for _, k, _ in self.blocks)

    def slices(self):
        for start, k, cycle in self.blocks:
            yield slice(start, start + k), cycle

    def is_valid(self, chromosome: np.ndarray) -> bool:
        chromosome = np.asarray(chromosome)
        if chromosome.shape != (self.n_genes,) or np.any(chromosome < 0):
            return False
        return all(int(chromosome[s].sum()) == cycle for s, cycle in self.slices())


@dataclass(frozen=True)
class GAConfig:
    population_size: int = 75
    max_generations: int = 20
    crossover_probability: float = 0.8
    mutation_probability: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.max_generations < 0:
            raise ValueError("max_generations must be nonnegative")
        for p in (self.crossover_probability, self.mutation_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")


# --- operators ------------------------------------------------------------


def sample_chromosome(layout: Layout, rng: np.random.Generator) -> np.ndarray:
    """Sequential draw: each phase uniform on [0, seconds left], last phase takes the rest."""
    out = np.empty(layout.n_genes, dtype=np.int64)
    for start, k, cycle in layout.blocks:
        left = cycle
        for j in range(k - 1):
            p = int(rng.integers(0, left + 1))
            out[start + j] = p
            left -= p
        out[start + k - 1] = left
    return out


def init_population(config: GAConfig, layout: Layout, rng: np.random.Generator) -> np.ndarray:
    return np.stack([sample_chromosome(layout, rng) for _ in range(config.population_size)])


def tournament(population: np.ndarray, fitness: np.ndarray, rng: np.random.Generator) -> int:
    """Binary tournament with replacement; returns the winner's row index.

    Ties go to the first draw.
    """
    if len(population) == 0:
        raise ValueError("empty population")
    i, j = (int(v) for v in rng.integers(0, len(population), size=2))
    fi, fj = fitness[i], fitness[j]
    if math.isnan(fi) or math.isnan(fj):
        raise ValueError("tournament between unevaluated chromosomes")
    return j if fj > fi else i


def repair(raw: np.ndarray, layout: Layout) -> np.ndarray:
    """Integerise per controller: floor, then hand the missing seconds one each
    to the largest fractional parts (lowest phase index on ties)."""
    raw = np.clip(np.asarray(raw, dtype=float), 0.0, None)
    out = np.empty(layout.n_genes, dtype=np.int64)
    for s, cycle in layout.slices():
        block = raw[s]
        base = np.floor(block)
        frac = block - base
        missing = cycle - int(base.sum())
        if missing < 0:
            # float noise pushed the sum over; take seconds back from the smallest fractions
            order = np.argsort(frac, kind="stable")[: -missing]
            base[order] -= 1
        elif missing > 0:
            order = np.argsort(-frac, kind="stable")[:missing]
            base[order] += 1
        out[s] = base.astype(np.int64)
    return out


def blend(father: np.ndarray, mother: np.ndarray, x: float, layout: Layout) -> np.ndarray:
    """Convex combination father*x + mother*(1-x), repaired to integers."""
    return repair(father * x + mother * (1.0 - x), layout)


def crossover(
    father: np.ndarray,
    mother: np.ndarray,
    layout: Layout,
    probability: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    if father.shape != mother.shape or father.shape != (layout.n_genes,):
        raise ValueError("parents do not share the chromosome layout")
    if rng.random() >= probability:
        return father.copy(), mother.copy()
    x1, x2 = rng.random(), rng.random()
    # open interval (0, 1)
    while x1 == 0.0:
        x1 = rng.random()
    while x2 == 0.0:
        x2 = rng.random()
    return blend(father, mother, x1, layout), blend(father, mother, x2, layout)


def transfer(chromosome: np.ndarray, layout: Layout, controller: int, donor: int, receiver: int, seconds: int) -> np.ndarray:
    start, k, _ = layout.blocks[controller]
    if donor == receiver or not (0 <= donor < k and 0 <= receiver < k):
        raise ValueError("donor and receiver must be distinct phases of the controller")
    if not 1 <= seconds <= chromosome[start + donor]:
        raise ValueError("transfer must move between 1 and the donor's duration")
    out = chromosome.copy()
    out[start + donor] -= seconds
    out[start + receiver] += seconds
    return out


def mutate(chromosome: np.ndarray, layout: Layout, probability: float, rng: np.random.Generator) -> np.ndarray:
    """Move a random number of seconds between two phases of one controller."""
    if rng.random() >= probability:
        return chromosome.copy()
    u = int(rng.integers(0, len(layout.blocks)))
    start, k, _ = layout.blocks[u]
    if k < 2:
        return chromosome.copy()
    block = chromosome[start : start + k]
    donors = np.flatnonzero(block > 0)
    v = int(donors[rng.integers(0, len(donors))])
    others = [w for w in range(k) if w != v]
    w = others[int(rng.integers(0, len(others)))]
    var = int(rng.integers(1, block[v] + 1))
    return transfer(chromosome, layout, u, v, w, var)


# --- driver ---------------------------------------------------------------


@dataclass
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    fitness: np.ndarray
    wall_ms: float
    best_chromosome: np.ndarray


@dataclass
class GenerationLog:
    records: list[GenerationRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def best(self) -> np.ndarray:
        return np.array([r.best_fitness for r in self.records])

    @property
    def best_so_far(self) -> np.ndarray:
        return np.maximum.accumulate(self.best)

    @property
    def wall_ms(self) -> np.ndarray:
        return np.array([r.wall_ms for r in self.records])

    def convergence_generation(self, tolerance: float = 0.01) -> int:
        """First generation whose best-so-far is within ``tolerance`` (relative) of the final best."""
        bsf = self.best_so_far
        final = bsf[-1]
        hits = np.flatnonzero(np.abs(bsf - final) <= tolerance * abs(final))
        return int(self.records[hits[0]].generation)

    def to_csv(self, path: str | Path, include_wall: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["generation", "best_fitness", "mean_fitness"]
            if include_wall:
                header.append("wall_ms")
            w.writerow(header + ["best_chromosome"])
            for r in self.records:
                row = [r.generation, repr(float(r.best_fitness)), repr(float(r.mean_fitness))]
                if include_wall:
                    row.append(f"{r.wall_ms:.3f}")
                w.writerow(row + [";".join(str(int(p)) for p in r.best_chromosome)])


@dataclass
class GAResult:
    best: np.ndarray
    best_fitness: float
    log: GenerationLog
    population: np.ndarray
    fitness: np.ndarray


def _evaluate(population, fitness_fn, vectorized, penalty, map_fn):
    if vectorized:
        try:
            return np.asarray(fitness_fn(population), dtype=float)
        except Exception:
            pass
        rows = [lambda c=c: float(fitness_fn(c[None, :])[0]) for c in population]
    else:
        rows = [lambda c=c: float(fitness_fn(c)) for c in population]

    def safe(call):
        try:
            value = call()
        except Exception:
            return -penalty
        return value if math.isfinite(value) else -penalty

    return np.array(list(map_fn(safe, rows)), dtype=float)


def run_ga(
    config: GAConfig,
    layout: Layout,
    fitness_fn: Callable,
    *,
    vectorized: bool = False,
    penalty: float = DEFAULT_PENALTY,
    map_fn: Callable = map,
    initial: np.ndarray | None = None,
) -> GAResult:
    """Generational GA: binary tournaments, blend crossover, transfer mutation, no elitism.

    ``fitness_fn`` maps a chromosome to a fitness (higher is better), or a
    2-D batch to a 1-D array when ``vectorized``. A chromosome whose
    evaluation raises or is non-finite scores ``-penalty``. ``map_fn`` may be
    an executor's ``map`` for parallel evaluation; variation always draws
    from one sequential stream so results do not depend on it.
    """
    init_rng = rng_stream(config.seed, "init")
    var_rng = rng_stream(config.seed, "variation")
    log = GenerationLog()

    t0 = time.perf_counter()
    population = init_population(config, layout, init_rng) if initial is None else np.array(initial)
    fit = _evaluate(population, fitness_fn, vectorized, penalty, map_fn)
    best_i = int(np.argmax(fit))
    best, best_fit = population[best_i].copy(), float(fit[best_i])

    def record(g, start):
        i = int(np.argmax(fit))
        log.records.append(
            GenerationRecord(
                g,
                float(fit[i]),
                float(np.mean(fit)),
                fit.copy(),
                (time.perf_counter() - start) * 1000.0,
                population[i].copy(),
            )
        )

    record(0, t0)
    for g in range(1, config.max_generations + 1):
        start = time.perf_counter()
        children = []
        while len(children) < config.population_size:
            father = population[tournament(population, fit, var_rng)]
            mother = population[tournament(population, fit, var_rng)]
            c1, c2 = crossover(father, mother, layout, config.crossover_probability, var_rng)
            children.append(mutate(c1, layout, config.mutation_probability, var_rng))
            if len(children) < config.population_size:
                children.append(mutate(c2, layout, config.mutation_probability, var_rng))
        population = np.stack(children)
        fit = _evaluate(population, fitness_fn, vectorized, penalty, map_fn)
        i = int(np.argmax(fit))
        if fit[i] > best_fit:
            best, best_fit = population[i].copy(), float(fit[i])
        record(g, start)
    return GAResult(best, best_fit, log, population, fit)
