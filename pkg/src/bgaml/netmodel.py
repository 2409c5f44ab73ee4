"""Road network, signal, demand and incident model.

Units: free-flow times in hours, capacities and demand in vehicles/hour,
phase durations and cycle lengths in integer seconds, incident windows in
seconds from the start of the simulated horizon.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

OD = tuple[str, str]


class NetworkError(ValueError):
    """Structural inconsistency in a network, plan or incident."""


@dataclass(frozen=True)
class Node:
    id: str
    junction: str | None = None


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    free_flow_time: float
    capacity: float
    lanes: int = 1

    def __post_init__(self):
        if not self.free_flow_time > 0:
            raise NetworkError(f"link {self.id}: free_flow_time must be > 0")
        if not self.capacity > 0:
            raise NetworkError(f"link {self.id}: capacity must be > 0")
        if int(self.lanes) != self.lanes or self.lanes < 1:
            raise NetworkError(f"link {self.id}: lanes must be a positive integer")


@dataclass(frozen=True)
class SignalController:
    """Fixed-cycle controller; ``phase_movements[k]`` holds the link ids green in phase k."""

    id: str
    junction: str
    phase_movements: tuple[frozenset[str], ...]
    cycle_length: int = 90

    def __post_init__(self):
        object.__setattr__(
            self, "phase_movements", tuple(frozenset(p) for p in self.phase_movements)
        )
        if self.cycle_length <= 0:
            raise NetworkError(f"controller {self.id}: cycle_length must be > 0")
        if not self.phase_movements:
            raise NetworkError(f"controller {self.id}: needs at least one phase")

    @property
    def num_phases(self) -> int:
        return len(self.phase_movements)


@dataclass(frozen=True)
class Route:
    origin: str
    destination: str
    links: tuple[str, ...]

    @property
    def od(self) -> OD:
        return (self.origin, self.destination)

    def uses(self, link_id: str) -> bool:
        return link_id in self.links


@dataclass(frozen=True)
class Incident:
    """Partial lane blockage on one link between ``start`` and ``start + duration`` seconds."""

    link_id: str
    lanes_blocked: int = 1
    start: float = 0.0
    duration: float = 3600.0

    def __post_init__(self):
        if int(self.lanes_blocked) != self.lanes_blocked or self.lanes_blocked < 1:
            raise NetworkError("incident must block at least one lane")
        if self.start < 0 or self.duration <= 0:
            raise NetworkError("incident window must be positive and start at t >= 0")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def overlap(self, t0: float, t1: float) -> float:
        """Fraction of the interval [t0, t1) covered by the incident."""
        covered = min(t1, self.end) - max(t0, self.start)
        return max(0.0, covered) / (t1 - t0)


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """Immutable network description.

    ``eq=False`` keeps identity hashing so compiled solver data can be cached
    per instance.
    """

    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    centroids: tuple[str, ...]
    demand: Mapping[OD, float]
    controllers: tuple[SignalController, ...] = ()
    routes: Mapping[OD, tuple[Route, ...]] = field(default_factory=dict)
    name: str = "network"

    def __post_init__(self):
        node_ids = {n.id for n in self.nodes}
        if len(node_ids) != len(self.nodes):
            raise NetworkError("duplicate node ids")
        link_ids = [l.id for l in self.links]
        if len(set(link_ids)) != len(link_ids):
            raise NetworkError("duplicate link ids")
        for l in self.links:
            if l.from_node not in node_ids or l.to_node not in node_ids:
                raise NetworkError(f"link {l.id} references an unknown node")
        for c in self.centroids:
            if c not in node_ids:
                raise NetworkError(f"centroid {c} is not a node")
        for (o, d), q in self.demand.items():
            if q < 0:
                raise NetworkError(f"negative demand for {o}->{d}")
            if o not in self.centroids or d not in self.centroids:
                raise NetworkError(f"demand {o}->{d} between non-centroids")
        by_id = {l.id: l for l in self.links}
        junction_of = {n.id: n.junction for n in self.nodes}
        seen_ctrl = set()
        for c in self.controllers:
            if c.id in seen_ctrl:
                raise NetworkError(f"duplicate controller id {c.id}")
            seen_ctrl.add(c.id)
            for phase in c.phase_movements:
                for lid in phase:
                    if lid not in by_id:
                        raise NetworkError(f"controller {c.id}: unknown link {lid}")
                    if junction_of[by_id[lid].from_node] != c.junction:
                        raise NetworkError(f"controller {c.id}: link {lid} is not inbound to {c.junction}")
        control = self._control_index()
        for od, routes in self.routes.items():
            for r in routes:
                _check_route(r, by_id)
                if r.od != od:
                    raise NetworkError(f"route keyed {od} runs {r.od}")
        object.__setattr__(self, "_links_by_id", by_id)
        object.__setattr__(self, "_control", control)

    def _control_index(self) -> dict[str, tuple[str, frozenset[int]]]:
        index: dict[str, tuple[str, set[int]]] = {}
        for c in self.controllers:
            for k, phase in enumerate(c.phase_movements):
                for lid in phase:
                    if lid in index and index[lid][0] != c.id:
                        raise NetworkError(f"link {lid} controlled by two controllers")
                    index.setdefault(lid, (c.id, set()))[1].add(k)
        return {lid: (cid, frozenset(ks)) for lid, (cid, ks) in index.items()}

    def link(self, link_id: str) -> Link:
        try:
            return self._links_by_id[link_id]
        except KeyError:
            raise NetworkError(f"unknown link {link_id}") from None

    def controlled_by(self, link_id: str) -> tuple[str, frozenset[int]] | None:
        """(controller id, phase indices granting green) or None for uncontrolled links."""
        return self._control.get(link_id)

    def controller(self, controller_id: str) -> SignalController:
        for c in self.controllers:
            if c.id == controller_id:
                return c
        raise NetworkError(f"unknown controller {controller_id}")

    @property
    def link_ids(self) -> tuple[str, ...]:
        return tuple(l.id for l in self.links)

    @property
    def od_pairs(self) -> list[OD]:
        return [od for od, q in self.demand.items() if q > 0]

    def total_demand(self) -> float:
        return float(sum(self.demand.values()))

    def route_uses(self, route: Route, link_id: str) -> int:
        """Link-route incidence: 1 iff the route traverses the link."""
        return int(route.uses(link_id))

    def replace(self, **changes) -> "NetworkSpec":
        return dataclasses.replace(self, **changes)


def _check_route(route: Route, by_id: Mapping[str, Link]) -> None:
    if not route.links:
        raise NetworkError(f"empty route for {route.od}")
    try:
        links = [by_id[lid] for lid in route.links]
    except KeyError as exc:
        raise NetworkError(f"route {route.od} uses unknown link {exc.args[0]}") from None
    if links[0].from_node != route.origin or links[-1].to_node != route.destination:
        raise NetworkError(f"route {route.od} does not join its origin and destination")
    for a, b in zip(links, links[1:]):
        if a.to_node != b.from_node:
            raise NetworkError(f"route {route.od} is disconnected at {a.id}->{b.id}")


# --- signal plans ---------------------------------------------------------


@dataclass(frozen=True)
class SignalPlan:
    """Phase durations per controller, in controller order."""

    controllers: tuple[str, ...]
    durations: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "controllers", tuple(self.controllers))
        object.__setattr__(
            self, "durations", tuple(tuple(int(p) for p in d) for d in self.durations)
        )
        if len(self.controllers) != len(self.durations):
            raise NetworkError("one duration vector per controller required")

    @classmethod
    def from_mapping(cls, durations: Mapping[str, Sequence[int]]) -> "SignalPlan":
        return cls(tuple(durations), tuple(tuple(v) for v in durations.values()))

    @classmethod
    def from_flat(cls, network: NetworkSpec, flat: Sequence[int]) -> "SignalPlan":
        """Decode the phase-major chromosome layout [p11..p1K, p21.., ...]."""
        flat = [int(v) for v in flat]
        expected = sum(c.num_phases for c in network.controllers)
        if len(flat) != expected:
            raise NetworkError(f"plan has {len(flat)} values, layout needs {expected}")
        out, i = [], 0
        for c in network.controllers:
            out.append(tuple(flat[i : i + c.num_phases]))
            i += c.num_phases
        return cls(tuple(c.id for c in network.controllers), tuple(out))

    @classmethod
    def uniform(cls, network: NetworkSpec) -> "SignalPlan":
        """Equal split of each cycle, leftover seconds to the lowest phases."""
        out = []
        for c in network.controllers:
            base, extra = divmod(c.cycle_length, c.num_phases)
            out.append(tuple(base + (1 if k < extra else 0) for k in range(c.num_phases)))
        return cls(tuple(c.id for c in network.controllers), tuple(out))

    def flat(self) -> list[int]:
        return [p for d in self.durations for p in d]

    def for_controller(self, controller_id: str) -> tuple[int, ...]:
        try:
            return self.durations[self.controllers.index(controller_id)]
        except ValueError:
            raise NetworkError(f"plan has no controller {controller_id}") from None


@dataclass(frozen=True)
class PlanViolation:
    controller: str
    reason: str
    actual_sum: int


def validate_plan(plan: SignalPlan, network: NetworkSpec) -> list[PlanViolation]:
    """Return cycle-constraint violations; an empty list means the plan is valid."""
    violations = []
    for c in network.controllers:
        if c.id not in plan.controllers:
            violations.append(PlanViolation(c.id, "missing controller", 0))
            continue
        d = plan.for_controller(c.id)
        total = sum(d)
        if len(d) != c.num_phases:
            violations.append(PlanViolation(c.id, f"expected {c.num_phases} phases", total))
        if any(p < 0 for p in d):
            violations.append(PlanViolation(c.id, "negative duration", total))
        if total != c.cycle_length:
            violations.append(
                PlanViolation(c.id, f"durations sum to {total}, cycle is {c.cycle_length}", total)
            )
    return violations


def phase_green_splits(plan: SignalPlan, network: NetworkSpec) -> dict[str, list[Fraction]]:
    # rational so the per-controller sum is exactly one; float() where needed
    return {
        c.id: [Fraction(p, c.cycle_length) for p in plan.for_controller(c.id)]
        for c in network.controllers
    }


def link_green_split(plan: SignalPlan, link: Link | str, network: NetworkSpec) -> float:
    """Share of the cycle during which the link's movement is green (1.0 if unsignalised)."""
    link_id = link if isinstance(link, str) else link.id
    control = network.controlled_by(link_id)
    if control is None:
        return 1.0
    cid, phases = control
    ctrl = network.controller(cid)
    durations = plan.for_controller(cid)
    if len(durations) != ctrl.num_phases or max(phases) >= len(durations):
        raise NetworkError(f"plan for {cid} lacks phases granting green to {link_id}")
    return sum(durations[k] for k in phases) / ctrl.cycle_length


# --- incidents ------------------------------------------------------------


def check_incident(network: NetworkSpec, incident: Incident, horizon: float = 3600.0) -> None:
    link = network.link(incident.link_id)
    if incident.lanes_blocked >= link.lanes:
        raise NetworkError(
            f"incident blocks {incident.lanes_blocked} of {link.lanes} lanes; full closure unsupported"
        )
    if incident.end > horizon:
        raise NetworkError("incident window exceeds the simulation horizon")


def capacity_factor(network: NetworkSpec, incident: Incident) -> float:
    link = network.link(incident.link_id)
    return (link.lanes - incident.lanes_blocked) / link.lanes


def apply_incident(network: NetworkSpec, incident: Incident) -> NetworkSpec:
    """Copy of the network with the blocked link's capacity reduced pro rata by lanes."""
    check_incident(network, incident)
    factor = capacity_factor(network, incident)
    links = tuple(
        dataclasses.replace(l, capacity=l.capacity * factor) if l.id == incident.link_id else l
        for l in network.links
    )
    return network.replace(links=links)


# --- route enumeration ----------------------------------------------------


def _key(cost: float) -> float:
    # Summation order differs between equal-cost paths.
    return round(cost, 9)


def _shortest_path(adj, src, dst, banned_nodes, banned_links, blocked):
    heap = [(0.0, (), src)]
    done = set()
    while heap:
        cost, path, node = heapq.heappop(heap)
        if node == dst:
            return cost, path
        if node in done:
            continue
        done.add(node)
        for lid, nxt, w in adj.get(node, ()):
            if lid in banned_links or nxt in banned_nodes or nxt in done:
                continue
            if nxt in blocked and nxt != dst:
                continue
            heapq.heappush(heap, (_key(cost + w), path + (lid,), nxt))
    return None


def _iter_simple_paths(network: NetworkSpec, origin: str, destination: str):
    """Yen's algorithm: loopless paths in nondecreasing free-flow cost."""
    adj: dict[str, list] = {}
    for l in sorted(network.links, key=lambda l: l.id):
        adj.setdefault(l.from_node, []).append((l.id, l.to_node, l.free_flow_time))
    by_id = {l.id: l for l in network.links}
    blocked = set(network.centroids) - {origin, destination}

    def nodes_of(path):
        return [origin] + [by_id[lid].to_node for lid in path]

    first = _shortest_path(adj, origin, destination, set(), set(), blocked)
    if first is None:
        return
    accepted = [first]
    seen = {first[1]}
    candidates: list = []
    yield first
    while True:
        _, prev = accepted[-1]
        prev_nodes = nodes_of(prev)
        for i in range(len(prev)):
            root = prev[:i]
            spur = prev_nodes[i]
            banned_links = {p[i] for _, p in accepted if p[:i] == root and len(p) > i}
            banned_nodes = set(prev_nodes[:i])
            found = _shortest_path(adj, spur, destination, banned_nodes, banned_links, blocked)
            if found is None:
                continue
            root_cost = sum(by_id[lid].free_flow_time for lid in root)
            path = root + found[1]
            if path not in seen:
                seen.add(path)
                heapq.heappush(candidates, (_key(root_cost + found[0]), path))
        if not candidates:
            return
        best = heapq.heappop(candidates)
        accepted.append(best)
        yield best


def enumerate_routes(network: NetworkSpec, od: OD, k: int = 4) -> list[Route]:
    """Up to ``k`` loopless routes ordered by (free-flow cost, link ids).

    Paths may not pass through centroids other than their own endpoints.
    """
    origin, destination = od
    if origin == destination:
        raise NetworkError("origin equals destination")
    kept: list[tuple[float, tuple[str, ...]]] = []
    for cost, path in _iter_simple_paths(network, origin, destination):
        if len(kept) >= k and cost > kept[k - 1][0]:
            break
        kept.append((cost, path))
    if not kept:
        raise NetworkError(f"no route from {origin} to {destination}")
    kept.sort()
    return [Route(origin, destination, path) for _, path in kept[:k]]


def with_routes(network: NetworkSpec, k: int = 4) -> NetworkSpec:
    """Fill in missing route sets for every OD pair with positive demand."""
    routes = dict(network.routes)
    for od in network.od_pairs:
        if not routes.get(od):
            routes[od] = tuple(enumerate_routes(network, od, k))
    return network.replace(routes=routes)


# --- structured-text I/O --------------------------------------------------


def network_to_dict(network: NetworkSpec) -> dict:
    return {
        "name": network.name,
        "nodes": [{"id": n.id, "junction": n.junction} for n in network.nodes],
        "links": [dataclasses.asdict(l) for l in network.links],
        "centroids": list(network.centroids),
        "demand": [{"origin": o, "destination": d, "flow": q} for (o, d), q in network.demand.items()],
        "routes": [
            {"origin": r.origin, "destination": r.destination, "links": list(r.links)}
            for rs in network.routes.values()
            for r in rs
        ],
        "controllers": [
            {
                "id": c.id,
                "junction": c.junction,
                "cycle_length": c.cycle_length,
                "phase_movements": [sorted(p) for p in c.phase_movements],
            }
            for c in network.controllers
        ],
    }


def network_from_dict(doc: Mapping) -> NetworkSpec:
    nodes = tuple(
        Node(n) if isinstance(n, str) else Node(n["id"], n.get("junction")) for n in doc["nodes"]
    )
    links = tuple(Link(**l) for l in doc["links"])
    demand = {(e["origin"], e["destination"]): float(e["flow"]) for e in doc["demand"]}
    routes: dict[OD, list[Route]] = {}
    for r in doc.get("routes", []) or []:
        route = Route(r["origin"], r["destination"], tuple(r["links"]))
        routes.setdefault(route.od, []).append(route)
    controllers = tuple(
        SignalController(
            c["id"],
            c["junction"],
            tuple(frozenset(p) for p in c["phase_movements"]),
            int(c.get("cycle_length", 90)),
        )
        for c in doc.get("controllers", [])
    )
    return NetworkSpec(
        nodes=nodes,
        links=links,
        centroids=tuple(doc["centroids"]),
        demand=demand,
        controllers=controllers,
        routes={od: tuple(rs) for od, rs in routes.items()},
        name=doc.get("name", "network"),
    )


def load_network(path: str | Path, k_routes: int = 4) -> NetworkSpec:
    with open(path) as fh:
        network = network_from_dict(json.load(fh))
    return with_routes(network, k_routes)


def save_network(network: NetworkSpec, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(network_to_dict(network), fh, indent=1)


def incident_from_dict(doc: Mapping | None) -> Incident | None:
    """Accepts either ``duration`` or ``end`` for the window length."""
    if not doc:
        return None
    unknown = set(doc) - {"link_id", "lanes_blocked", "start", "duration", "end"}
    if unknown:
        raise NetworkError(f"unknown incident keys {sorted(unknown)}")
    if "duration" in doc and "end" in doc:
        raise NetworkError("give the incident window as duration or end, not both")
    start = float(doc.get("start", 0.0))
    duration = float(doc["end"]) - start if "end" in doc else float(doc.get("duration", 3600.0))
    return Incident(doc["link_id"], int(doc.get("lanes_blocked", 1)), start, duration)


def plan_array(plans: Iterable[SignalPlan]) -> np.ndarray:
    return np.array([p.flat() for p in plans], dtype=np.int64)
