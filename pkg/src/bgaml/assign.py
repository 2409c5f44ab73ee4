"""Static user-equilibrium assignment used as the ground-truth fitness oracle.

Link cost is BPR on the signal-effective capacity::

    t_a = t0_a * (1 + alpha * (v_a / (lambda_a * S_a)) ** beta)

Equilibrium is found by the method of successive averages over the fixed
route sets. The hour is cut into equal intervals; each interval is solved
with the capacity in force during it (incident on or off) and the hourly
demand rate.
"""

from __future__ import annotations

import csv
import weakref
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netmodel import (
    Incident,
    Link,
    NetworkError,
    NetworkSpec,
    SignalPlan,
    capacity_factor,
    check_incident,
    validate_plan,
)

ALPHA = 0.15
BETA = 4.0
DEFAULT_PENALTY = 1e6
HORIZON = 3600.0
N_INTERVALS = 6

# Cost placed on zero-green links so no route through them is ever chosen.
_BLOCKED_COST = 1e30


class InfeasiblePlan(ValueError):
    """Every route of some loaded OD pair crosses a link that never gets green."""


def link_travel_time(
    link: Link, flow: float, green_split: float, alpha: float = ALPHA, beta: float = BETA
) -> float:
    """BPR travel time in hours on the green-scaled capacity."""
    if flow < 0:
        raise ValueError("flow must be nonnegative")
    if not 0 <= green_split <= 1:
        raise ValueError("green split must lie in [0, 1]")
    if flow == 0:
        return link.free_flow_time
    if green_split == 0:
        raise InfeasiblePlan(f"link {link.id} carries flow but never gets green")
    ratio = flow / (green_split * link.capacity)
    return link.free_flow_time * (1.0 + alpha * ratio**beta)


@dataclass(frozen=True)
class LinkState:
    link_id: str
    interval: int
    flow: float
    effective_capacity: float
    travel_time: float
    speed: float


@dataclass
class AssignmentResult:
    """Per-interval equilibrium; arrays are indexed [interval, link] or [interval, route]."""

    link_ids: tuple[str, ...]
    routes: tuple
    flows: np.ndarray
    capacities: np.ndarray
    travel_times: np.ndarray
    free_flow_times: np.ndarray
    route_flows: np.ndarray
    route_costs: np.ndarray
    interval_hours: float
    relative_gap: float
    iterations: int
    converged: bool

    @property
    def n_intervals(self) -> int:
        return self.flows.shape[0]

    @property
    def speeds(self) -> np.ndarray:
        """Free-flow time over travel time, in (0, 1]."""
        return self.free_flow_times[None, :] / self.travel_times

    @property
    def total_travel_time(self) -> float:
        return total_travel_time(self)

    def link_states(self, interval: int | None = None) -> list[LinkState]:
        intervals = range(self.n_intervals) if interval is None else [interval]
        speeds = self.speeds
        return [
            LinkState(
                lid,
                t,
                float(self.flows[t, i]),
                float(self.capacities[t, i]),
                float(self.travel_times[t, i]),
                float(speeds[t, i]),
            )
            for t in intervals
            for i, lid in enumerate(self.link_ids)
        ]

    def link_flow_from_routes(self, interval: int = 0) -> dict[str, float]:
        """Link flows rebuilt by summing route flows over link membership."""
        out = dict.fromkeys(self.link_ids, 0.0)
        for r, f in zip(self.routes, self.route_flows[interval]):
            for lid in r.links:
                out[lid] += float(f)
        return out

    def to_csv(self, path: str | Path) -> None:
        speeds = self.speeds
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["interval", "link_id", "capacity", "flow", "speed", "travel_time"])
            for t in range(self.n_intervals):
                for i, lid in enumerate(self.link_ids):
                    w.writerow(
                        [
                            t,
                            lid,
                            repr(float(self.capacities[t, i])),
                            repr(float(self.flows[t, i])),
                            repr(float(speeds[t, i])),
                            repr(float(self.travel_times[t, i])),
                        ]
                    )
            w.writerow(["summary", "total_travel_time", repr(self.total_travel_time)])
            w.writerow(["summary", "relative_gap", repr(self.relative_gap)])


def total_travel_time(result: AssignmentResult) -> float:
    """Vehicle-hours: sum of flow x travel time x interval length."""
    return float(np.sum(result.flows * result.travel_times) * result.interval_hours)


class CompiledNetwork:
    """Array form of a network's links, signals and route sets."""

    def __init__(self, network: NetworkSpec):
        self.network = network
        links = network.links
        self.link_ids = tuple(l.id for l in links)
        index = {lid: i for i, lid in enumerate(self.link_ids)}
        self.t0 = np.array([l.free_flow_time for l in links])
        self.capacity = np.array([l.capacity for l in links])

        n_genes = sum(c.num_phases for c in network.controllers)
        self.green = np.zeros((len(links), n_genes))
        self.uncontrolled = np.ones(len(links))
        offset = 0
        for c in network.controllers:
            for k, phase in enumerate(c.phase_movements):
                for lid in phase:
                    self.green[index[lid], offset + k] = 1.0 / c.cycle_length
                    self.uncontrolled[index[lid]] = 0.0
            offset += c.num_phases
        self.n_genes = n_genes

        ods = [od for od in network.demand if network.demand[od] > 0]
        missing = [od for od in ods if not network.routes.get(od)]
        if missing:
            raise NetworkError(f"no routes for loaded OD pairs {missing[:3]}")
        self.ods = ods
        self.demand = np.array([network.demand[od] for od in ods])
        self.routes = tuple(r for od in ods for r in network.routes[od])
        kmax = max(len(network.routes[od]) for od in ods) if ods else 1
        self.incidence = np.zeros((len(self.routes), len(links)))
        self.padded = np.full((len(ods), kmax), len(self.routes))
        self.route_od = np.empty(len(self.routes), dtype=np.int64)
        r = 0
        for w, od in enumerate(ods):
            for k, route in enumerate(network.routes[od]):
                for lid in route.links:
                    self.incidence[r, index[lid]] = 1.0
                self.padded[w, k] = r
                self.route_od[r] = w
                r += 1
        self.index = index

    def green_splits(self, plan_flat: np.ndarray) -> np.ndarray:
        return self.green @ np.asarray(plan_flat, dtype=float) + self.uncontrolled


_COMPILED: "weakref.WeakKeyDictionary[NetworkSpec, CompiledNetwork]" = weakref.WeakKeyDictionary()


def compile_network(network: NetworkSpec) -> CompiledNetwork:
    cn = _COMPILED.get(network)
    if cn is None:
        cn = _COMPILED[network] = CompiledNetwork(network)
    return cn


def _msa(cn: CompiledNetwork, capacity, green, gap_tol, max_iter, alpha, beta):
    blocked = green <= 0
    eff = np.where(blocked, 1.0, green * capacity)
    route_blocked = (cn.incidence @ blocked.astype(float)) > 0
    W = len(cn.ods)
    rows = np.arange(W)
    pad_blocked = np.append(route_blocked, True)[cn.padded]
    if np.any(pad_blocked.all(axis=1)):
        w = int(np.flatnonzero(pad_blocked.all(axis=1))[0])
        raise InfeasiblePlan(f"every route of {cn.ods[w]} crosses a link with zero green")

    def costs(v):
        c = cn.t0 * (1.0 + alpha * (v / eff) ** beta)
        c[blocked] = _BLOCKED_COST
        return c

    def all_or_nothing(rc):
        padded = np.append(rc, np.inf)[cn.padded]
        best = cn.padded[rows, np.argmin(padded, axis=1)]
        y = np.zeros(len(cn.routes))
        y[best] = cn.demand
        return y, padded.min(axis=1)

    f, _ = all_or_nothing(cn.incidence @ costs(np.zeros_like(cn.t0)))
    gap = np.inf
    n = 1
    while True:
        v = cn.incidence.T @ f
        c = costs(v)
        rc = cn.incidence @ c
        y, min_rc = all_or_nothing(rc)
        current = float(f @ rc)
        gap = (current - float(cn.demand @ min_rc)) / current if current > 0 else 0.0
        if gap < gap_tol or n >= max_iter:
            break
        n += 1
        f = f + (y - f) / n
    return f, v, c, rc, max(gap, 0.0), n, gap < gap_tol


def solve_ue(
    network: NetworkSpec,
    plan: SignalPlan | np.ndarray,
    incident: Incident | None = None,
    *,
    n_intervals: int = N_INTERVALS,
    horizon: float = HORIZON,
    gap_tol: float = 1e-3,
    max_iter: int = 500,
    alpha: float = ALPHA,
    beta: float = BETA,
) -> AssignmentResult:
    """MSA user equilibrium for every interval of the horizon.

    ``plan`` may be a SignalPlan or the flat phase-major integer array.
    Raises InfeasiblePlan when some loaded OD pair has no route with green
    on every signalised link. Hitting ``max_iter`` is not an error; the
    result then carries ``converged=False`` and the achieved gap.
    """
    cn = compile_network(network)
    if isinstance(plan, SignalPlan):
        bad = validate_plan(plan, network)
        if bad:
            raise NetworkError(f"invalid plan: {bad[0]}")
        flat = np.array(plan.flat(), dtype=float)
    else:
        flat = np.asarray(plan, dtype=float)
        if flat.shape != (cn.n_genes,):
            raise NetworkError(f"plan length {flat.shape} does not match {cn.n_genes} phases")
    green = cn.green_splits(flat)

    L, R = len(cn.link_ids), len(cn.routes)
    factors = np.ones(n_intervals)
    inc_idx = None
    if incident is not None:
        check_incident(network, incident, horizon)
        inc_idx = cn.index[incident.link_id]
        drop = 1.0 - capacity_factor(network, incident)
        step = horizon / n_intervals
        factors = np.array(
            [1.0 - drop * incident.overlap(t * step, (t + 1) * step) for t in range(n_intervals)]
        )

    flows = np.zeros((n_intervals, L))
    caps = np.zeros((n_intervals, L))
    times = np.zeros((n_intervals, L))
    rflows = np.zeros((n_intervals, R))
    rcosts = np.zeros((n_intervals, R))
    gap, iters, converged = 0.0, 0, True
    solved: dict[float, tuple] = {}
    for t, factor in enumerate(factors):
        if factor not in solved:
            capacity = cn.capacity.copy()
            if inc_idx is not None:
                capacity[inc_idx] *= factor
            if R:
                out = _msa(cn, capacity, green, gap_tol, max_iter, alpha, beta)
            else:
                out = (np.zeros(0), np.zeros(L), cn.t0.copy(), np.zeros(0), 0.0, 0, True)
            solved[factor] = (capacity, out)
        capacity, (f, v, c, rc, g, n, ok) = solved[factor]
        flows[t], rflows[t], rcosts[t] = v, f, rc
        caps[t] = green * capacity
        # Zero-green links carry no flow; report them at free-flow time.
        times[t] = np.where(green <= 0, cn.t0, c)
        gap, iters, converged = max(gap, g), max(iters, n), converged and ok
    return AssignmentResult(
        link_ids=cn.link_ids,
        routes=cn.routes,
        flows=flows,
        capacities=caps,
        travel_times=times,
        free_flow_times=cn.t0,
        route_flows=rflows,
        route_costs=rcosts,
        interval_hours=horizon / n_intervals / 3600.0,
        relative_gap=gap,
        iterations=iters,
        converged=converged,
    )


def fitness(
    network: NetworkSpec,
    plan: SignalPlan | np.ndarray,
    incident: Incident | None = None,
    penalty: float = DEFAULT_PENALTY,
    **kwargs,
) -> float:
    """Negated total travel time; infeasible plans score ``-penalty``."""
    try:
        return -solve_ue(network, plan, incident, **kwargs).total_travel_time
    except InfeasiblePlan:
        return -penalty
