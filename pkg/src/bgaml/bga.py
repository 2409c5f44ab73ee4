"""Surrogate-driven GA: the GA engine scored by a trained regressor.

Predictions at or below zero are treated as infeasible and scored with the
penalty. The returned plan is the integer-repaired mean of the last
generation, re-scored once with the assignment oracle.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import assign
from .gacore import DEFAULT_PENALTY, GAConfig, GAResult, GenerationLog, Layout, repair, run_ga
from .netmodel import Incident, NetworkSpec, SignalPlan
from .surrogate.dataset import NetworkState, feature_matrix


def clamp_predictions(predicted: np.ndarray, penalty: float = DEFAULT_PENALTY) -> np.ndarray:
    """-prediction, or -penalty when the prediction is not positive.

    Positive predictions never score at or below -penalty, so a clamped
    plan cannot win a tournament against a scored one.
    """
    predicted = np.asarray(predicted, dtype=float)
    floor = np.nextafter(-penalty, 0.0)
    return np.where(predicted > 0, np.maximum(-predicted, floor), -penalty)


def surrogate_fitness(model, state: NetworkState, plan, penalty: float = DEFAULT_PENALTY):
    """Negated predicted travel time for one plan (1-D) or a batch of plans (2-D)."""
    plans = np.asarray(plan, dtype=float)
    out = clamp_predictions(model.predict(feature_matrix(plans, state)), penalty)
    return float(out[0]) if plans.ndim == 1 else out


@dataclass
class PhaseStats:
    mean: np.ndarray
    std: np.ndarray

    def to_csv(self, path: str | Path, network: NetworkSpec) -> None:
        ids = [f"{c.id}_{k + 1}" for c in network.controllers for k in range(c.num_phases)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["phase_id", "mean", "stddev"])
            for pid, m, s in zip(ids, self.mean, self.std):
                w.writerow([pid, repr(float(m)), repr(float(s))])


def extract_final_plan(population, layout: Layout) -> tuple[np.ndarray, PhaseStats]:
    """Per-phase mean over the population, repaired to integers summing to each cycle."""
    population = np.atleast_2d(np.asarray(population, dtype=float))
    if len(population) == 0:
        raise ValueError("empty population")
    # sort first so the float sums do not depend on row order
    ordered = np.sort(population, axis=0)
    mean = ordered.mean(axis=0)
    std = ordered.std(axis=0)
    return repair(mean, layout), PhaseStats(mean, std)


@dataclass
class BgaResult:
    plan: np.ndarray
    population: np.ndarray
    predicted_fitness: np.ndarray
    stats: PhaseStats
    oracle_ttt: float
    ga: GAResult
    wall_seconds: float

    @property
    def log(self) -> GenerationLog:
        return self.ga.log


def run_bga_ml(
    config: GAConfig,
    network: NetworkSpec,
    incident: Incident | None,
    model,
    state: NetworkState,
    penalty: float = DEFAULT_PENALTY,
    **oracle_kw,
) -> BgaResult:
    layout = Layout.of(network)
    start = time.perf_counter()
    result = run_ga(
        config,
        layout,
        lambda plans: surrogate_fitness(model, state, plans, penalty),
        vectorized=True,
        penalty=penalty,
    )
    plan, stats = extract_final_plan(result.population, layout)
    wall = time.perf_counter() - start
    try:
        ttt = assign.solve_ue(network, plan, incident, **oracle_kw).total_travel_time
    except assign.InfeasiblePlan:
        ttt = float("inf")
    return BgaResult(plan, result.population, result.fitness, stats, ttt, result, wall)


@dataclass
class Comparison:
    ga_convergence: int
    bga_convergence: int
    ga_best_fitness: float
    bga_best_fitness: float
    ga_wall_seconds: float
    bga_wall_seconds: float
    ga_ttt: float
    bga_ttt: float

    def rows(self) -> list[tuple[str, str]]:
        return [(k, repr(v)) for k, v in vars(self).items()]


def compare_runs(
    ga_log: GenerationLog,
    ga_plan,
    bga: BgaResult,
    network: NetworkSpec,
    incident: Incident | None,
    tolerance: float = 0.01,
    **oracle_kw,
) -> Comparison:
    try:
        ga_ttt = assign.solve_ue(network, ga_plan, incident, **oracle_kw).total_travel_time
    except assign.InfeasiblePlan:
        ga_ttt = float("inf")
    return Comparison(
        ga_convergence=ga_log.convergence_generation(tolerance),
        bga_convergence=bga.log.convergence_generation(tolerance),
        ga_best_fitness=float(ga_log.best.max()),
        bga_best_fitness=float(bga.log.best.max()),
        ga_wall_seconds=float(ga_log.wall_ms.sum() / 1000.0),
        bga_wall_seconds=float(bga.log.wall_ms.sum() / 1000.0),
        ga_ttt=float(ga_ttt),
        bga_ttt=float(bga.oracle_ttt),
    )


def write_fitness_distributions(path: str | Path, logs: dict[str, GenerationLog]) -> None:
    """One row per (generation, engine) with every member's fitness, semicolon-joined."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["generation", "engine", "fitness"])
        for engine, log in logs.items():
            for rec in log:
                w.writerow([rec.generation, engine, ";".join(repr(float(f)) for f in rec.fitness)])


def oracle_fitness(network: NetworkSpec, incident: Incident | None, penalty: float = DEFAULT_PENALTY, **kw):
    """Chromosome -> negated oracle travel time, for use with run_ga."""
    return lambda plan: assign.fitness(network, plan, incident, penalty=penalty, **kw)
