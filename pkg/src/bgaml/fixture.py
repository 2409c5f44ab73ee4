"""Built-in networks: the four-junction grid case study and a one-junction toy.

Every junction is split into one inbound and one outbound node per side, so
each turning movement is its own link and can be signalised on its own.
Left-hand traffic: left turns are the unopposed turns.
"""

from __future__ import annotations

from dataclasses import dataclass

from .netmodel import Incident, Link, NetworkSpec, Node, SignalController, with_routes

SIDES = ("N", "E", "S", "W")
OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}
# heading -> exit side for each movement
LEFT = {"N": "W", "W": "S", "S": "E", "E": "N"}
RIGHT = {"N": "E", "E": "S", "S": "W", "W": "N"}

# Rows are origins 1..8, columns destinations 1..8 (vehicles per hour).
DEMAND_TABLE = (
    (0, 150, 150, 150, 150, 100, 100, 150),
    (150, 0, 100, 100, 100, 150, 150, 100),
    (150, 100, 0, 150, 100, 100, 100, 150),
    (100, 150, 100, 0, 150, 100, 150, 150),
    (150, 100, 100, 150, 0, 150, 150, 100),
    (100, 100, 100, 100, 0, 0, 150, 100),
    (100, 150, 750, 150, 150, 100, 0, 150),
    (100, 150, 150, 100, 150, 100, 100, 0),
)

# junction -> side -> neighbouring junction or centroid
GRID = {
    "J1": {"N": "C1", "E": "J2", "S": "J3", "W": "C8"},
    "J2": {"N": "C2", "E": "C3", "S": "J4", "W": "J1"},
    "J3": {"N": "J1", "E": "J4", "S": "C6", "W": "C7"},
    "J4": {"N": "J2", "E": "C4", "S": "C5", "W": "J3"},
}

# Two-lane through movement on the eastbound-first route of OD C7 -> C3.
INCIDENT_LINK = "J3:WE"


@dataclass(frozen=True)
class FixtureParams:
    """Free-flow times in seconds, capacities in vehicles/hour/lane."""

    road_time: float = 30.0
    road_lane_capacity: float = 1800.0
    road_lanes: int = 1
    arterial: tuple[str, ...] = ("J3>J1", "J1>J2")
    arterial_lanes: int = 2
    connector_time: float = 10.0
    connector_lane_capacity: float = 1800.0
    connector_lanes: int = 2
    turn_time: float = 10.0
    turn_lane_capacity: float = 450.0
    through_lanes: int = 2
    cycle_length: int = 90


def movement(arrival_side: str, exit_side: str) -> str:
    heading = OPPOSITE[arrival_side]
    if exit_side == heading:
        return "through"
    if exit_side == LEFT[heading]:
        return "left"
    if exit_side == RIGHT[heading]:
        return "right"
    return "uturn"


def turn_id(junction: str, arrival_side: str, exit_side: str) -> str:
    return f"{junction}:{arrival_side}{exit_side}"


def _junction_parts(junction, neighbours, p: FixtureParams, phase_of):
    nodes, links = [], []
    for s in SIDES:
        nodes.append(Node(f"{junction}.in{s}", junction))
        nodes.append(Node(f"{junction}.out{s}", junction))
    phases = [set() for _ in range(4)]
    for a in SIDES:
        for e in SIDES:
            kind = movement(a, e)
            if kind == "uturn":
                continue
            lanes = p.through_lanes if kind == "through" else 1
            lid = turn_id(junction, a, e)
            links.append(
                Link(
                    lid,
                    f"{junction}.in{a}",
                    f"{junction}.out{e}",
                    p.turn_time / 3600.0,
                    p.turn_lane_capacity * lanes,
                    lanes,
                )
            )
            for k in phase_of(a, kind):
                phases[k].add(lid)
    return nodes, links, phases


def four_phase(arrival_side: str, kind: str) -> tuple[int, ...]:
    """Phase 1 serves N-S arrivals, phase 2 E-W arrivals. Phase 3 adds E-W
    right arrows with N-S lefts, phase 4 N-S right arrows with E-W lefts.

    Every turn moves in two phases and no phase's movements are a subset of
    another's, so no phase is redundant.
    """
    ns = arrival_side in ("N", "S")
    if kind == "through":
        return (0,) if ns else (1,)
    if kind == "left":
        return (0, 2) if ns else (1, 3)
    return (0, 3) if ns else (1, 2)


def build_fixture(params: FixtureParams | None = None, k_routes: int = 4) -> NetworkSpec:
    """Four signalised junctions on a 2x2 grid, eight centroids, 72 links."""
    p = params or FixtureParams()
    nodes = [Node(f"C{i}") for i in range(1, 9)]
    links: list[Link] = []
    controllers = []
    phase_sets = {}
    for j in sorted(GRID):
        jn, jl, phases = _junction_parts(j, GRID[j], p, four_phase)
        nodes += jn
        links += jl
        phase_sets[j] = phases
    for j, sides in sorted(GRID.items()):
        for s, other in sides.items():
            if other.startswith("C"):
                cap = p.connector_lane_capacity * p.connector_lanes
                t0 = p.connector_time / 3600.0
                links.append(Link(f"{other}>{j}", other, f"{j}.in{s}", t0, cap, p.connector_lanes))
                links.append(Link(f"{j}>{other}", f"{j}.out{s}", other, t0, cap, p.connector_lanes))
            else:
                lid = f"{j}>{other}"
                lanes = p.arterial_lanes if lid in p.arterial else p.road_lanes
                links.append(
                    Link(
                        lid,
                        f"{j}.out{s}",
                        f"{other}.in{OPPOSITE[s]}",
                        p.road_time / 3600.0,
                        p.road_lane_capacity * lanes,
                        lanes,
                    )
                )
    for j in sorted(GRID):
        controllers.append(SignalController(f"S{j[1:]}", j, tuple(phase_sets[j]), p.cycle_length))
    demand = {
        (f"C{o + 1}", f"C{d + 1}"): float(q)
        for o, row in enumerate(DEMAND_TABLE)
        for d, q in enumerate(row)
        if o != d
    }
    network = NetworkSpec(
        nodes=tuple(nodes),
        links=tuple(links),
        centroids=tuple(f"C{i}" for i in range(1, 9)),
        demand=demand,
        controllers=tuple(controllers),
        name="grid4",
    )
    return with_routes(network, k_routes)


def fixture_incident() -> Incident:
    """One of two lanes blocked for the whole simulated hour."""
    return Incident(INCIDENT_LINK, lanes_blocked=1, start=0.0, duration=3600.0)


def two_phase(arrival_side: str, kind: str) -> tuple[int, ...]:
    return (0,) if arrival_side in ("N", "S") else (1,)


SINGLE_DEMAND = {
    ("N", "S"): 500, ("N", "E"): 120, ("N", "W"): 150,
    ("S", "N"): 450, ("S", "E"): 150, ("S", "W"): 100,
    ("E", "W"): 350, ("E", "N"): 100, ("E", "S"): 120,
    ("W", "E"): 300, ("W", "N"): 120, ("W", "S"): 100,
}


SINGLE_PARAMS = FixtureParams(turn_lane_capacity=1800.0)


def build_single_junction(params: FixtureParams | None = None) -> NetworkSpec:
    """One two-phase junction with a centroid on every side (91 feasible plans at 90 s)."""
    p = params or SINGLE_PARAMS
    nodes, links, phases = _junction_parts("J1", None, p, two_phase)
    nodes = [Node(f"Z{s}") for s in SIDES] + nodes
    cap = p.connector_lane_capacity * p.connector_lanes
    t0 = p.connector_time / 3600.0
    for s in SIDES:
        links.append(Link(f"Z{s}>J1", f"Z{s}", f"J1.in{s}", t0, cap, p.connector_lanes))
        links.append(Link(f"J1>Z{s}", f"J1.out{s}", f"Z{s}", t0, cap, p.connector_lanes))
    demand = {(f"Z{o}", f"Z{d}"): float(q) for (o, d), q in SINGLE_DEMAND.items()}
    network = NetworkSpec(
        nodes=tuple(nodes),
        links=tuple(links),
        centroids=tuple(f"Z{s}" for s in SIDES),
        demand=demand,
        controllers=(SignalController("S1", "J1", tuple(phases[:2]), p.cycle_length),),
        name="single",
    )
    return with_routes(network, 1)
