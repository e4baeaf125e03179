"""Static road-network model: generation, signal programs, serialization, trips."""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

# Connection signal states
RED = 0
GREEN_YIELD = 1
GREEN_PRIORITY = 2

_STATE_CHARS = {RED: "r", GREEN_YIELD: "g", GREEN_PRIORITY: "G"}
_CHAR_STATES = {v: k for k, v in _STATE_CHARS.items()}

NETWORK_FORMAT_VERSION = 1

DEFAULT_SPEED_LIMIT = 13.89  # m/s (50 km/h)
DEFAULT_MIN_PHASE_DURATION = 5.0
DEFAULT_YELLOW_DURATION = 3.0

CYCLIC = "cyclic"
ACYCLIC = "acyclic"


class NetworkGenError(Exception):
    """Raised when the generator exhausts its retry budget."""


@dataclass(frozen=True)
class Node:
    id: str
    x: float
    y: float
    signalized: bool


@dataclass(frozen=True)
class Road:
    id: str
    from_node: str
    to_node: str
    lane_ids: tuple[str, ...]
    reverse_id: Optional[str]  # the opposite-direction road, if any


@dataclass(frozen=True)
class Lane:
    id: str
    road_id: str
    index: int
    length: float
    speed_limit: float = DEFAULT_SPEED_LIMIT


@dataclass(frozen=True)
class Connection:
    id: int
    in_lane: str
    out_lane: str
    intersection: str
    turn: str  # 's' straight, 'l' left, 'r' right


@dataclass(frozen=True)
class Phase:
    id: int
    intersection: str
    cycle_index: int
    # state per connection of the intersection, ordered like
    # RoadNetwork.intersection_connections[intersection]
    states: tuple[int, ...]


@dataclass(frozen=True)
class SignalProgram:
    intersection: str
    constraint_type: str  # CYCLIC or ACYCLIC
    phase_order: tuple[int, ...]
    min_phase_duration: float = DEFAULT_MIN_PHASE_DURATION
    yellow_duration: float = DEFAULT_YELLOW_DURATION


@dataclass
class RoadNetwork:
    """Immutable after construction; indices are derived in __post_init__."""

    nodes: dict[str, Node]
    roads: dict[str, Road]
    lanes: dict[str, Lane]
    connections: list[Connection]
    phases: list[Phase]
    programs: dict[str, SignalProgram]

    def __post_init__(self):
        self.lane_ids: list[str] = sorted(self.lanes)
        self.lane_index: dict[str, int] = {l: i for i, l in enumerate(self.lane_ids)}
        self.intersections: list[str] = sorted(
            n for n, node in self.nodes.items() if node.signalized
        )
        self.intersection_connections: dict[str, list[Connection]] = {
            n: [] for n in self.intersections
        }
        for c in self.connections:
            self.intersection_connections[c.intersection].append(c)
        self.phase_by_id: dict[int, Phase] = {p.id: p for p in self.phases}
        self.intersection_phases: dict[str, list[Phase]] = {n: [] for n in self.intersections}
        for n, prog in self.programs.items():
            self.intersection_phases[n] = [self.phase_by_id[pid] for pid in prog.phase_order]
        # lane adjacency via connections
        self.out_connections: dict[str, list[Connection]] = {l: [] for l in self.lanes}
        self.in_connections: dict[str, list[Connection]] = {l: [] for l in self.lanes}
        for c in self.connections:
            self.out_connections[c.in_lane].append(c)
            self.in_connections[c.out_lane].append(c)
        self.origin_lanes: list[str] = sorted(
            l.id
            for l in self.lanes.values()
            if not self.nodes[self.roads[l.road_id].from_node].signalized
        )
        self.destination_lanes: list[str] = sorted(
            l.id
            for l in self.lanes.values()
            if not self.nodes[self.roads[l.road_id].to_node].signalized
        )
        self._route_cache: dict[tuple[str, str], Optional[tuple[str, ...]]] = {}
        self._tables = None  # connectivity feature tables, attached lazily
        self.validate()

    # -- validation ---------------------------------------------------------

    def validate(self):
        for c in self.connections:
            if c.in_lane not in self.lanes or c.out_lane not in self.lanes:
                raise ValueError(f"connection {c.id} references unknown lane")
            if self.roads[self.lanes[c.in_lane].road_id].to_node != c.intersection:
                raise ValueError(f"connection {c.id}: in_lane does not end at {c.intersection}")
            if self.roads[self.lanes[c.out_lane].road_id].from_node != c.intersection:
                raise ValueError(f"connection {c.id}: out_lane does not start at {c.intersection}")
        for n in self.intersections:
            conns = self.intersection_connections[n]
            phases = self.intersection_phases[n]
            if len(phases) < 2:
                raise ValueError(f"intersection {n} has {len(phases)} phases (<2)")
            seen = set()
            for p in phases:
                if len(p.states) != len(conns):
                    raise ValueError(f"phase {p.id} state vector mismatch at {n}")
                if not any(s != RED for s in p.states):
                    raise ValueError(f"phase {p.id} has no green connection")
                if p.states in seen:
                    raise ValueError(f"duplicate phase state vector at {n}")
                seen.add(p.states)
            covered = [False] * len(conns)
            for p in phases:
                for i, s in enumerate(p.states):
                    if s != RED:
                        covered[i] = True
            if not all(covered):
                raise ValueError(f"phases at {n} do not cover all connections")
            order = self.programs[n].phase_order
            if sorted(order) != sorted(p.id for p in phases):
                raise ValueError(f"program at {n} is not a permutation of its phases")

    # -- helpers ------------------------------------------------------------

    def local_phase_index(self, intersection: str, phase_id: int) -> int:
        for i, p in enumerate(self.intersection_phases[intersection]):
            if p.id == phase_id:
                return i
        raise KeyError(f"phase {phase_id} not at intersection {intersection}")

    def connection_state(self, phase: Phase, conn: Connection) -> int:
        conns = self.intersection_connections[phase.intersection]
        return phase.states[conns.index(conn)]

    def shortest_route(self, origin: str, dest: str) -> Optional[tuple[str, ...]]:
        """Lane sequence from origin to dest minimizing summed lane length."""
        key = (origin, dest)
        if key in self._route_cache:
            return self._route_cache[key]
        dist = {origin: 0.0}
        prev: dict[str, str] = {}
        heap = [(0.0, origin)]
        while heap:
            d, lane = heapq.heappop(heap)
            if lane == dest:
                break
            if d > dist.get(lane, math.inf):
                continue
            for c in self.out_connections[lane]:
                nd = d + self.lanes[c.out_lane].length
                if nd < dist.get(c.out_lane, math.inf):
                    dist[c.out_lane] = nd
                    prev[c.out_lane] = lane
                    heapq.heappush(heap, (nd, c.out_lane))
        if dest not in dist:
            self._route_cache[key] = None
            return None
        route = [dest]
        while route[-1] != origin:
            route.append(prev[route[-1]])
        result = tuple(reversed(route))
        self._route_cache[key] = result
        return result

    def reachable_lanes(self, start: str) -> set[str]:
        seen = {start}
        q = deque([start])
        while q:
            lane = q.popleft()
            for c in self.out_connections[lane]:
                if c.out_lane not in seen:
                    seen.add(c.out_lane)
                    q.append(c.out_lane)
        return seen

    def with_constraint_types(self, assignment: dict[str, str]) -> "RoadNetwork":
        """Copy of the network with per-intersection constraint types replaced."""
        programs = {
            n: replace(prog, constraint_type=assignment.get(n, prog.constraint_type))
            for n, prog in self.programs.items()
        }
        return RoadNetwork(
            nodes=self.nodes,
            roads=self.roads,
            lanes=self.lanes,
            connections=self.connections,
            phases=self.phases,
            programs=programs,
        )


def next_cycle_phase(network: RoadNetwork, prog: SignalProgram, current_phase_id: int) -> Phase:
    """Phase at (cycle position + 1) mod cycle length."""
    order = prog.phase_order
    try:
        i = order.index(current_phase_id)
    except ValueError:
        raise KeyError(f"phase {current_phase_id} not in program of {prog.intersection}")
    return network.phase_by_id[order[(i + 1) % len(order)]]


# -- generation --------------------------------------------------------------


@dataclass
class NetworkGenConfig:
    intersection_range: tuple[int, int] = (2, 6)
    edge_length_range: tuple[float, float] = (100.0, 200.0)
    lanes_per_road_range: tuple[int, int] = (1, 4)
    seed: int = 0
    extra_edge_prob: float = 0.4
    grid_shape: Optional[tuple[int, int]] = None  # force a full rows x cols grid

    def __post_init__(self):
        if self.intersection_range[0] < 1 or self.intersection_range[0] > self.intersection_range[1]:
            raise ValueError("empty intersection range")
        if self.edge_length_range[0] > self.edge_length_range[1]:
            raise ValueError("empty edge length range")
        if self.lanes_per_road_range[0] < 1 or self.lanes_per_road_range[0] > self.lanes_per_road_range[1]:
            raise ValueError("empty lanes-per-road range")


def _angle(dx: float, dy: float) -> float:
    return math.atan2(dy, dx)


def _wrap_pi(a: float) -> float:
    while a > math.pi:
        a -= 2 * math.pi
    while a < -math.pi:
        a += 2 * math.pi
    return a


def generate_network(cfg: NetworkGenConfig) -> RoadNetwork:
    """Random connected network with fringe entry/exit roads and signal programs.

    Deterministic for a given config. Retries internally when a draw produces
    an intersection that cannot support at least two phases.
    """
    root = np.random.default_rng(cfg.seed)
    last_err: Optional[Exception] = None
    for _ in range(40):
        rng = np.random.default_rng(root.integers(0, 2**63 - 1))
        try:
            return _generate_once(cfg, rng)
        except NetworkGenError as e:
            last_err = e
    raise NetworkGenError(f"generation failed after retries: {last_err}")


def _generate_once(cfg: NetworkGenConfig, rng: np.random.Generator) -> RoadNetwork:
    lo, hi = cfg.edge_length_range
    spacing = (lo + hi) / 2.0
    jitter = min((hi - lo) / 2.0, spacing - lo - 1.0, hi - spacing - 1.0) * 0.75

    if cfg.grid_shape is not None:
        rows, cols = cfg.grid_shape
        cells = [(r, c) for r in range(rows) for c in range(cols)]
        tree_edges = []
        for r in range(rows):
            for c in range(cols):
                if c + 1 < cols:
                    tree_edges.append(((r, c), (r, c + 1)))
                if r + 1 < rows:
                    tree_edges.append(((r, c), (r + 1, c)))
        adj_pairs = set()
    else:
        n = int(rng.integers(cfg.intersection_range[0], cfg.intersection_range[1] + 1))
        cells = [(0, 0)]
        occupied = {(0, 0)}
        tree_edges = []
        while len(cells) < n:
            base = cells[rng.integers(0, len(cells))]
            nbrs = [
                (base[0] + dr, base[1] + dc)
                for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0))
            ]
            free = [c for c in nbrs if c not in occupied]
            if not free:
                continue
            new = free[rng.integers(0, len(free))]
            occupied.add(new)
            cells.append(new)
            tree_edges.append((base, new))
        # extra edges between adjacent occupied cells
        adj_pairs = set()
        linked = {tuple(sorted((a, b))) for a, b in tree_edges}
        for c in cells:
            for dr, dc in ((0, 1), (1, 0)):
                other = (c[0] + dr, c[1] + dc)
                pair = tuple(sorted((c, other)))
                if other in occupied and pair not in linked:
                    adj_pairs.add(pair)
        adj_pairs = {p for p in sorted(adj_pairs) if rng.random() < cfg.extra_edge_prob}

    nodes: dict[str, Node] = {}
    pos: dict[tuple[int, int], tuple[float, float]] = {}
    cell_name: dict[tuple[int, int], str] = {}
    for i, cell in enumerate(cells):
        x = cell[1] * spacing + rng.uniform(-jitter, jitter)
        y = cell[0] * spacing + rng.uniform(-jitter, jitter)
        name = f"J{i}"
        nodes[name] = Node(name, x, y, signalized=True)
        pos[cell] = (x, y)
        cell_name[cell] = name

    edges = list(tree_edges) + sorted(adj_pairs)
    undirected = [(cell_name[a], cell_name[b]) for a, b in edges]

    roads: dict[str, Road] = {}
    lanes: dict[str, Lane] = {}
    road_seq = 0

    def add_road_pair(a: str, b: str, lane_count: int):
        nonlocal road_seq
        na, nb = nodes[a], nodes[b]
        length = math.hypot(nb.x - na.x, nb.y - na.y)
        ids = (f"R{road_seq}", f"R{road_seq + 1}")
        road_seq += 2
        for rid, (u, v) in zip(ids, ((a, b), (b, a))):
            lane_ids = tuple(f"{rid}_{k}" for k in range(lane_count))
            roads[rid] = Road(rid, u, v, lane_ids, reverse_id=None)
            for k, lid in enumerate(lane_ids):
                lanes[lid] = Lane(lid, rid, k, length)
        roads[ids[0]] = replace(roads[ids[0]], reverse_id=ids[1])
        roads[ids[1]] = replace(roads[ids[1]], reverse_id=ids[0])

    lane_lo, lane_hi = cfg.lanes_per_road_range
    for a, b in undirected:
        add_road_pair(a, b, int(rng.integers(lane_lo, lane_hi + 1)))

    # fringe roads on intersections with spare approaches
    internal_degree = {name: 0 for name in nodes}
    for a, b in undirected:
        internal_degree[a] += 1
        internal_degree[b] += 1
    fringe_i = 0
    for name in sorted(nodes):
        if not nodes[name].signalized:
            continue
        want = 2 if internal_degree[name] == 0 else (1 if internal_degree[name] < 4 else 0)
        for _ in range(want):
            node = nodes[name]
            angles = []
            for r in roads.values():
                if r.from_node == name:
                    other = nodes[r.to_node]
                    angles.append(_angle(other.x - node.x, other.y - node.y))
            if angles:
                angles = sorted(angles)
                gaps = [
                    (_wrap_pi(angles[(i + 1) % len(angles)] - angles[i]) % (2 * math.pi), i)
                    for i in range(len(angles))
                ]
                gap, i = max(gaps)
                theta = angles[i] + gap / 2.0
            else:
                theta = rng.uniform(0, 2 * math.pi)
            dist = rng.uniform(lo + 5, hi - 5)
            vx = node.x + dist * math.cos(theta)
            vy = node.y + dist * math.sin(theta)
            vname = f"F{fringe_i}"
            fringe_i += 1
            nodes[vname] = Node(vname, vx, vy, signalized=False)
            add_road_pair(vname, name, int(rng.integers(lane_lo, lane_hi + 1)))

    connections = _build_connections(nodes, roads, lanes)
    phases, programs = _build_phases(nodes, roads, connections)

    net = RoadNetwork(
        nodes=nodes,
        roads=roads,
        lanes=lanes,
        connections=connections,
        phases=phases,
        programs=programs,
    )
    _check_usability(net)
    return net


def _build_connections(nodes, roads, lanes) -> list[Connection]:
    conns: list[Connection] = []
    cid = 0
    for name in sorted(nodes):
        if not nodes[name].signalized:
            continue
        in_roads = sorted(r.id for r in roads.values() if r.to_node == name)
        out_roads = sorted(r.id for r in roads.values() if r.from_node == name)
        for ir in in_roads:
            in_road = roads[ir]
            a = nodes[in_road.from_node]
            b = nodes[in_road.to_node]
            in_dir = _angle(b.x - a.x, b.y - a.y)
            for orid in out_roads:
                if orid == in_road.reverse_id:
                    continue
                out_road = roads[orid]
                c = nodes[out_road.to_node]
                out_dir = _angle(c.x - b.x, c.y - b.y)
                turn_angle = _wrap_pi(out_dir - in_dir)
                if abs(turn_angle) < math.pi / 6:
                    turn = "s"
                elif turn_angle > 0:
                    turn = "l"
                else:
                    turn = "r"
                # cover every lane on both sides so no lane is orphaned
                n_in = len(in_road.lane_ids)
                n_out = len(out_road.lane_ids)
                for k in range(max(n_in, n_out)):
                    in_lane = in_road.lane_ids[min(k, n_in - 1)]
                    out_lane = out_road.lane_ids[min(k, n_out - 1)]
                    conns.append(Connection(cid, in_lane, out_lane, name, turn))
                    cid += 1
    return conns


def _build_phases(nodes, roads, connections) -> tuple[list[Phase], dict[str, SignalProgram]]:
    phases: list[Phase] = []
    programs: dict[str, SignalProgram] = {}
    pid = 0
    by_int: dict[str, list[Connection]] = {}
    for c in connections:
        by_int.setdefault(c.intersection, []).append(c)
    for name in sorted(by_int):
        conns = by_int[name]
        in_roads = sorted({roads[_lane_road(c.in_lane)].id for c in conns})

        def road_angle(rid):
            r = roads[rid]
            a, b = nodes[r.from_node], nodes[r.to_node]
            return _angle(b.x - a.x, b.y - a.y)

        # cluster approaches into axes by direction modulo pi
        axes: list[list[str]] = []
        for rid in in_roads:
            ang = road_angle(rid) % math.pi
            placed = False
            for axis in axes:
                ref = road_angle(axis[0]) % math.pi
                d = abs(ang - ref)
                if min(d, math.pi - d) < math.pi / 4:
                    axis.append(rid)
                    placed = True
                    break
            if not placed:
                axes.append([rid])

        states_list: list[tuple[int, ...]] = []
        if len(axes) >= 2:
            for axis in axes:
                axis_set = set(axis)
                sr = tuple(
                    (GREEN_PRIORITY if c.turn == "s" else GREEN_YIELD)
                    if (_lane_road(c.in_lane) in axis_set and c.turn in ("s", "r"))
                    else RED
                    for c in conns
                )
                if any(s != RED for s in sr):
                    states_list.append(sr)
                left = tuple(
                    GREEN_PRIORITY
                    if (_lane_road(c.in_lane) in axis_set and c.turn == "l")
                    else RED
                    for c in conns
                )
                if any(s != RED for s in left):
                    states_list.append(left)
        if len(states_list) < 2:
            # degenerate geometry: one phase per approach road
            states_list = []
            for rid in in_roads:
                st = tuple(
                    GREEN_PRIORITY if _lane_road(c.in_lane) == rid else RED for c in conns
                )
                if any(s != RED for s in st):
                    states_list.append(st)
        # drop duplicates, keep first occurrence
        seen = set()
        unique = []
        for st in states_list:
            if st not in seen:
                seen.add(st)
                unique.append(st)
        if len(unique) < 2:
            raise NetworkGenError(f"intersection {name} admits only {len(unique)} phase(s)")
        order = []
        for idx, st in enumerate(unique):
            phases.append(Phase(pid, name, idx, st))
            order.append(pid)
            pid += 1
        programs[name] = SignalProgram(name, CYCLIC, tuple(order))
    return phases, programs


def _lane_road(lane_id: str) -> str:
    return lane_id.rsplit("_", 1)[0]


def _check_usability(net: RoadNetwork):
    if not net.origin_lanes or not net.destination_lanes:
        raise NetworkGenError("network has no fringe entry/exit lanes")
    reach_all = set()
    dests = set(net.destination_lanes)
    for o in net.origin_lanes:
        r = net.reachable_lanes(o)
        if not (r & dests):
            raise NetworkGenError(f"origin lane {o} reaches no destination")
        reach_all |= r
    missing = set(net.lane_ids) - reach_all - set(net.origin_lanes)
    if missing:
        raise NetworkGenError(f"lanes unreachable from any origin: {sorted(missing)[:4]}")


# -- serialization ------------------------------------------------------------


def network_to_json(net: RoadNetwork) -> str:
    doc = {
        "format_version": NETWORK_FORMAT_VERSION,
        "nodes": [
            {"id": n.id, "x": n.x, "y": n.y, "signalized": n.signalized}
            for n in (net.nodes[k] for k in sorted(net.nodes))
        ],
        "roads": [
            {
                "id": r.id,
                "from": r.from_node,
                "to": r.to_node,
                "lanes": list(r.lane_ids),
                "reverse": r.reverse_id,
            }
            for r in (net.roads[k] for k in sorted(net.roads))
        ],
        "lanes": [
            {
                "id": l.id,
                "road": l.road_id,
                "index": l.index,
                "length": l.length,
                "speed_limit": l.speed_limit,
            }
            for l in (net.lanes[k] for k in sorted(net.lanes))
        ],
        "connections": [
            {
                "id": c.id,
                "in": c.in_lane,
                "out": c.out_lane,
                "intersection": c.intersection,
                "turn": c.turn,
            }
            for c in net.connections
        ],
        "phases": [
            {
                "id": p.id,
                "intersection": p.intersection,
                "cycle_index": p.cycle_index,
                "states": "".join(_STATE_CHARS[s] for s in p.states),
            }
            for p in net.phases
        ],
        "programs": [
            {
                "intersection": prog.intersection,
                "constraint_type": prog.constraint_type,
                "phase_order": list(prog.phase_order),
                "min_phase_duration": prog.min_phase_duration,
                "yellow_duration": prog.yellow_duration,
            }
            for prog in (net.programs[k] for k in sorted(net.programs))
        ],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def network_from_json(text: str) -> RoadNetwork:
    doc = json.loads(text)
    version = doc.get("format_version")
    if version != NETWORK_FORMAT_VERSION:
        raise ValueError(f"unsupported network format version: {version}")
    nodes = {d["id"]: Node(d["id"], d["x"], d["y"], d["signalized"]) for d in doc["nodes"]}
    roads = {
        d["id"]: Road(d["id"], d["from"], d["to"], tuple(d["lanes"]), d.get("reverse"))
        for d in doc["roads"]
    }
    lanes = {
        d["id"]: Lane(d["id"], d["road"], d["index"], d["length"], d["speed_limit"])
        for d in doc["lanes"]
    }
    connections = [
        Connection(d["id"], d["in"], d["out"], d["intersection"], d["turn"])
        for d in doc["connections"]
    ]
    phases = [
        Phase(
            d["id"],
            d["intersection"],
            d["cycle_index"],
            tuple(_CHAR_STATES[ch] for ch in d["states"]),
        )
        for d in doc["phases"]
    ]
    programs = {
        d["intersection"]: SignalProgram(
            d["intersection"],
            d["constraint_type"],
            tuple(d["phase_order"]),
            d["min_phase_duration"],
            d["yellow_duration"],
        )
        for d in doc["programs"]
    }
    return RoadNetwork(nodes, roads, lanes, connections, phases, programs)


def save_network(net: RoadNetwork, path):
    with open(path, "w") as f:
        f.write(network_to_json(net))


def load_network(path) -> RoadNetwork:
    with open(path) as f:
        return network_from_json(f.read())


# -- trips --------------------------------------------------------------------


@dataclass(frozen=True)
class Trip:
    time: int  # insertion time, seconds
    origin: str
    dest: str


@dataclass
class TripProcess:
    """Origin/destination sampling distributions over fringe lanes."""

    origin_probs: np.ndarray  # aligned with network.origin_lanes
    dest_probs: np.ndarray  # aligned with network.destination_lanes
    resample_period: float = 120.0
    insertion_rate: float = 0.25

    def __post_init__(self):
        for v in (self.origin_probs, self.dest_probs):
            if abs(float(np.sum(v)) - 1.0) > 1e-9:
                raise ValueError("probability vector does not sum to 1")
        if self.resample_period <= 0:
            raise ValueError("resample period must be positive")


def resample_od(net: RoadNetwork, tp: TripProcess, rng: np.random.Generator) -> TripProcess:
    """Fresh flat-Dirichlet OD vectors over the eligible fringe lanes."""
    return TripProcess(
        origin_probs=rng.dirichlet(np.ones(len(net.origin_lanes))),
        dest_probs=rng.dirichlet(np.ones(len(net.destination_lanes))),
        resample_period=tp.resample_period,
        insertion_rate=tp.insertion_rate,
    )


def fresh_trip_process(
    net: RoadNetwork,
    rng: np.random.Generator,
    resample_period: float = 120.0,
    insertion_rate: float = 0.25,
) -> TripProcess:
    base = TripProcess(
        origin_probs=np.ones(len(net.origin_lanes)) / len(net.origin_lanes),
        dest_probs=np.ones(len(net.destination_lanes)) / len(net.destination_lanes),
        resample_period=resample_period,
        insertion_rate=insertion_rate,
    )
    return resample_od(net, base, rng)


def generate_trips(
    net: RoadNetwork,
    tp: TripProcess,
    duration_s: int,
    rng: np.random.Generator,
) -> list[Trip]:
    """Bernoulli insertion schedule; OD vectors redrawn every resample period.

    Destinations are restricted to lanes actually reachable from the drawn
    origin (renormalized), so every trip admits a route.
    """
    reachable: dict[str, np.ndarray] = {}
    dest_idx = {l: i for i, l in enumerate(net.destination_lanes)}
    for o in net.origin_lanes:
        mask = np.zeros(len(net.destination_lanes))
        for l in net.reachable_lanes(o) & set(net.destination_lanes):
            mask[dest_idx[l]] = 1.0
        reachable[o] = mask

    trips: list[Trip] = []
    current = tp
    for t in range(duration_s):
        if t > 0 and t % int(current.resample_period) == 0:
            current = resample_od(net, current, rng)
        if rng.random() < current.insertion_rate:
            o_i = int(rng.choice(len(net.origin_lanes), p=current.origin_probs))
            origin = net.origin_lanes[o_i]
            w = current.dest_probs * reachable[origin]
            if w.sum() <= 0:
                w = reachable[origin]
            w = w / w.sum()
            d_i = int(rng.choice(len(net.destination_lanes), p=w))
            trips.append(Trip(t, origin, net.destination_lanes[d_i]))
    return trips


def trips_to_json(trips: list[Trip]) -> str:
    return (
        json.dumps(
            [{"t": tr.time, "origin": tr.origin, "dest": tr.dest} for tr in trips],
            sort_keys=True,
            separators=(",", ":"),
        )
        + "\n"
    )


def trips_from_json(text: str) -> list[Trip]:
    return [Trip(d["t"], d["origin"], d["dest"]) for d in json.loads(text)]


def save_trips(trips: list[Trip], path):
    with open(path, "w") as f:
        f.write(trips_to_json(trips))


def load_trips(path) -> list[Trip]:
    with open(path) as f:
        return trips_from_json(f.read())
