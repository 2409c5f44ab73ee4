"""Training data for the surrogate: random plans scored by the assignment oracle.

A feature row is the plan's phase durations followed by a network-state
block: capacity, flow and speed proxy for every link in each recorded
interval. The state describes the network when the incident is reported, so
it is computed once, under a reference plan, and shared by every row.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from itertools import zip_longest
from pathlib import Path
from typing import Callable

import numpy as np

from ..assign import DEFAULT_PENALTY, InfeasiblePlan, N_INTERVALS, solve_ue
from ..gacore import Layout, rng_stream, sample_chromosome
from ..netmodel import Incident, NetworkSpec, SignalPlan

TARGET = "ttt_hours"
STATE_FIELDS = ("cap", "flow", "speed")
_STATE_COLUMN = re.compile(r"^l_.+_t(\d+)_(?:cap|flow|speed)$")


def plan_columns(network: NetworkSpec) -> list[str]:
    return [f"p_{c.id}_{k + 1}" for c in network.controllers for k in range(c.num_phases)]


def state_columns(network: NetworkSpec, intervals) -> list[str]:
    return [f"l_{l.id}_t{t}_{f}" for t in intervals for l in network.links for f in STATE_FIELDS]


def fingerprint(plan) -> str:
    return ";".join(str(int(p)) for p in plan)


@dataclass(frozen=True)
class NetworkState:
    """Link-state snapshot used as the non-plan part of every feature row."""

    intervals: tuple[int, ...]
    columns: tuple[str, ...]
    values: np.ndarray

    @property
    def n_features(self) -> int:
        return len(self.values)


def snapshot_intervals(incident: Incident | None, n_snapshots: int, n_intervals: int = N_INTERVALS,
                       horizon: float = 3600.0) -> tuple[int, ...]:
    if not 1 <= n_snapshots <= n_intervals:
        raise ValueError(f"snapshot count must lie in [1, {n_intervals}]")
    if n_snapshots == n_intervals:
        return tuple(range(n_intervals))
    first = 0 if incident is None else min(int(incident.start // (horizon / n_intervals)), n_intervals - 1)
    first = min(first, n_intervals - n_snapshots)
    return tuple(range(first, first + n_snapshots))


def network_state(
    network: NetworkSpec,
    incident: Incident | None,
    reference_plan=None,
    n_snapshots: int = 1,
    **oracle_kw,
) -> NetworkState:
    """Equilibrium link states under ``reference_plan`` (even splits by default)."""
    plan = SignalPlan.uniform(network) if reference_plan is None else reference_plan
    result = solve_ue(network, plan, incident, **oracle_kw)
    intervals = snapshot_intervals(incident, n_snapshots, result.n_intervals)
    speeds = result.speeds
    block = np.stack(
        [np.stack([result.capacities[t], result.flows[t], speeds[t]], axis=1).ravel() for t in intervals]
    ).ravel()
    return NetworkState(intervals, tuple(state_columns(network, intervals)), block)


def feature_matrix(plans, state: NetworkState) -> np.ndarray:
    plans = np.atleast_2d(np.asarray(plans, dtype=float))
    return np.hstack([plans, np.broadcast_to(state.values, (len(plans), state.n_features))])


@dataclass
class TrainingDataset:
    columns: list[str]
    X: np.ndarray
    y: np.ndarray
    n_plan: int
    n_runs: int = 0
    dropped: int = 0
    duplicates: int = 0

    def __len__(self) -> int:
        return len(self.y)

    @property
    def plans(self) -> np.ndarray:
        return self.X[:, : self.n_plan].astype(np.int64)

    @property
    def fingerprints(self) -> list[str]:
        return [fingerprint(p) for p in self.plans]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns + [TARGET])
            for x, t in zip(self.X, self.y):
                plan = [str(int(v)) for v in x[: self.n_plan]]
                w.writerow(plan + [repr(float(v)) for v in x[self.n_plan :]] + [repr(float(t))])

    @classmethod
    def from_csv(cls, path: str | Path, network: NetworkSpec | None = None) -> "TrainingDataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValueError(f"{path}: empty dataset file")
        header, body = rows[0], rows[1:]
        if header[-1] != TARGET:
            raise ValueError(f"{path}: last column must be {TARGET!r}, found {header[-1]!r}")
        columns = header[:-1]
        n_plan = sum(1 for c in columns if c.startswith("p_"))
        if network is not None:
            check_schema(columns, network)
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(columns, data[:, :-1], data[:, -1], n_plan, n_runs=len(body))


def check_schema(columns: list[str], network: NetworkSpec) -> None:
    """Raise naming the first column that does not fit ``network``'s layout."""
    intervals = []
    for c in columns:
        m = _STATE_COLUMN.match(c)
        if m and int(m.group(1)) not in intervals:
            intervals.append(int(m.group(1)))
    expected = plan_columns(network) + state_columns(network, intervals)
    for got, want in zip_longest(columns, expected):
        if got != want:
            raise ValueError(f"dataset column {got!r} does not match the network (expected {want!r})")


def generate_dataset(
    network: NetworkSpec,
    incident: Incident | None,
    n_runs: int,
    seed: int = 0,
    *,
    state: NetworkState | None = None,
    n_snapshots: int = 1,
    map_fn: Callable = map,
    max_ttt: float = DEFAULT_PENALTY,
    **oracle_kw,
) -> TrainingDataset:
    """Sample ``n_runs`` plans, drop repeats, and score the rest with the oracle.

    Plans the oracle rejects as infeasible, or whose travel time reaches
    ``max_ttt`` (gridlock), are dropped and counted.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    layout = Layout.of(network)
    rng = rng_stream(seed, "sampling")
    sampled = [sample_chromosome(layout, rng) for _ in range(n_runs)]
    seen, plans = set(), []
    for p in sampled:
        key = fingerprint(p)
        if key not in seen:
            seen.add(key)
            plans.append(p)
    if state is None:
        state = network_state(network, incident, n_snapshots=n_snapshots, **oracle_kw)

    def evaluate(plan):
        try:
            ttt = solve_ue(network, plan, incident, **oracle_kw).total_travel_time
        except InfeasiblePlan:
            return None
        return ttt if 0 < ttt < max_ttt else None

    ttts = list(map_fn(evaluate, plans))
    keep = [i for i, t in enumerate(ttts) if t is not None]
    P = np.array([plans[i] for i in keep], dtype=float).reshape(len(keep), layout.n_genes)
    return TrainingDataset(
        columns=plan_columns(network) + list(state.columns),
        X=feature_matrix(P, state) if keep else np.empty((0, layout.n_genes + state.n_features)),
        y=np.array([ttts[i] for i in keep], dtype=float),
        n_plan=layout.n_genes,
        n_runs=n_runs,
        dropped=len(plans) - len(keep),
        duplicates=n_runs - len(plans),
    )
