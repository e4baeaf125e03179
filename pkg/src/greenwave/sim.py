"""Discrete-time (1 s) microscopic traffic simulation with signal controllers.

Vehicles follow a gap-safe kinematic rule: per step, speed becomes
min(v + a, speed_limit, free distance); braking is instantaneous, which keeps
the model collision-free without a deceleration cap. The intersection box has
zero extent: a vehicle whose front passes the stop line of an open connection
continues directly onto the next lane of its route.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .netmodel import (
    CYCLIC,
    GREEN_PRIORITY,
    RED,
    Phase,
    RoadNetwork,
    Trip,
    next_cycle_phase,
)


class IllegalAction(Exception):
    def __init__(self, intersection: str, phase_id: int, reason: str):
        super().__init__(f"illegal phase {phase_id} at {intersection}: {reason}")
        self.intersection = intersection
        self.phase_id = phase_id


@dataclass
class SimConfig:
    accel: float = 2.6  # m/s^2
    veh_length: float = 5.0
    min_gap: float = 2.5
    stop_speed: float = 0.1  # below this a vehicle counts as stopped
    queue_zone: float = 50.0  # queue membership: within this distance of lane end
    yield_zone: float = 50.0  # green-yield blocks if priority approach occupied here


@dataclass
class Vehicle:
    id: int
    trip_index: int  # position in the sorted trip list; stable across policies
    route: tuple[str, ...]
    route_pos: int
    pos: float  # front of vehicle, meters from lane start
    speed: float
    scheduled_t: int
    insert_t: int
    delay: float = 0.0
    moved: bool = False

    @property
    def lane(self) -> str:
        return self.route[self.route_pos]


@dataclass
class ControllerState:
    intersection: str
    current: int  # phase id
    target: int  # differs from current only during a yellow interstage
    yellow_remaining: int
    tsls: int  # seconds since the last switch began

    @property
    def in_yellow(self) -> bool:
        return self.target != self.current


@dataclass
class CompletedTrip:
    vehicle_id: int
    trip_index: int
    insert_t: int
    complete_t: int
    delay: float


@dataclass
class StepOutcome:
    lane_rewards: np.ndarray  # aligned with network.lane_ids, -queue each
    global_reward: float
    d_t: float  # instantaneous delay over in-network vehicles
    pending_count: int
    completed: list[CompletedTrip]


def effective_connection_state(cur_state: int, tgt_state: int, in_yellow: bool) -> tuple[int, bool]:
    """(displayed green level, is_yellow) for one connection.

    During a yellow interstage only movements green in both the departing and
    the incoming phase stay open; green-to-red movements show yellow.
    """
    if not in_yellow:
        return cur_state, False
    return min(cur_state, tgt_state), (cur_state != RED and tgt_state == RED)


class TrafficSim:
    def __init__(self, network: RoadNetwork, trips: list[Trip], cfg: Optional[SimConfig] = None):
        self.network = network
        self.cfg = cfg or SimConfig()
        self.trips = sorted(trips, key=lambda tr: (tr.time, tr.origin, tr.dest))
        self.reset()

    def reset(self):
        net = self.network
        self.t = 0
        self.controllers: dict[str, ControllerState] = {}
        for n in net.intersections:
            first = net.programs[n].phase_order[0]
            self.controllers[n] = ControllerState(n, first, first, 0, 10**9)
        self.lane_vehicles: dict[str, list[Vehicle]] = {l: [] for l in net.lane_ids}
        self.pending: dict[str, deque[tuple[int, Trip]]] = {}
        self.completed: list[CompletedTrip] = []
        self.inserted_count = 0
        self.completed_count = 0
        self._trip_cursor = 0
        self._veh_seq = 0

    # -- controller rules -----------------------------------------------------

    def legal_phases(self, intersection: str) -> list[Phase]:
        """Legal targets, in cycle order."""
        net = self.network
        ctl = self.controllers[intersection]
        prog = net.programs[intersection]
        if ctl.in_yellow:
            return [net.phase_by_id[ctl.target]]
        if ctl.tsls < prog.min_phase_duration:
            return [net.phase_by_id[ctl.current]]
        if prog.constraint_type == CYCLIC:
            cur = net.phase_by_id[ctl.current]
            nxt = next_cycle_phase(net, prog, ctl.current)
            return [cur] if nxt.id == cur.id else [cur, nxt]
        return list(net.intersection_phases[intersection])

    def _apply_action(self, action: dict[str, int]):
        net = self.network
        for n in net.intersections:
            if n not in action:
                raise IllegalAction(n, -1, "no phase selected")
            pid = action[n]
            legal = {p.id for p in self.legal_phases(n)}
            if pid not in legal:
                raise IllegalAction(n, pid, f"legal set is {sorted(legal)}")
            ctl = self.controllers[n]
            if ctl.in_yellow or pid == ctl.current:
                continue  # switch in progress, or no switch requested
            ctl.tsls = 0
            cur = net.phase_by_id[ctl.current]
            tgt = net.phase_by_id[pid]
            goes_red = any(
                c != RED and t == RED for c, t in zip(cur.states, tgt.states)
            )
            if goes_red:
                ctl.target = pid
                ctl.yellow_remaining = int(net.programs[n].yellow_duration)
            else:
                ctl.current = pid
                ctl.target = pid

    def _tick_pre(self):
        for ctl in self.controllers.values():
            ctl.tsls += 1

    def _tick_post(self):
        for ctl in self.controllers.values():
            if ctl.in_yellow:
                ctl.yellow_remaining -= 1
                if ctl.yellow_remaining <= 0:
                    ctl.current = ctl.target

    def connection_open(self, conn_index: int) -> tuple[bool, bool]:
        """(open, has priority) under the currently displayed states."""
        net = self.network
        c = net.connections[conn_index]
        ctl = self.controllers[c.intersection]
        conns = net.intersection_connections[c.intersection]
        local = conns.index(c)
        cur = net.phase_by_id[ctl.current].states[local]
        tgt = net.phase_by_id[ctl.target].states[local]
        state, _ = effective_connection_state(cur, tgt, ctl.in_yellow)
        return state != RED, state == GREEN_PRIORITY

    # -- vehicles ---------------------------------------------------------------

    def _insert(self):
        cfg = self.cfg
        while self._trip_cursor < len(self.trips) and self.trips[self._trip_cursor].time <= self.t:
            tr = self.trips[self._trip_cursor]
            self.pending.setdefault(tr.origin, deque()).append((self._trip_cursor, tr))
            self._trip_cursor += 1
        for origin in sorted(self.pending):
            q = self.pending[origin]
            while q:
                vehicles = self.lane_vehicles[origin]
                entry_clear = cfg.veh_length + cfg.veh_length + cfg.min_gap
                if vehicles and min(v.pos for v in vehicles) < entry_clear:
                    break
                trip_index, tr = q.popleft()
                route = self.network.shortest_route(tr.origin, tr.dest)
                if route is None:
                    raise RuntimeError(f"trip {tr} has no route")
                veh = Vehicle(
                    id=self._veh_seq,
                    trip_index=trip_index,
                    route=route,
                    route_pos=0,
                    pos=cfg.veh_length,
                    speed=0.0,
                    scheduled_t=tr.time,
                    insert_t=self.t,
                    # time spent queued outside the network counts as full stop
                    delay=float(self.t - tr.time),
                )
                self._veh_seq += 1
                self.inserted_count += 1
                vehicles.append(veh)
        for origin in [o for o, q in self.pending.items() if not q]:
            del self.pending[origin]

    def _effective_states(self) -> dict[int, tuple[bool, bool]]:
        net = self.network
        out: dict[int, tuple[bool, bool]] = {}
        for n in net.intersections:
            ctl = self.controllers[n]
            cur = net.phase_by_id[ctl.current]
            tgt = net.phase_by_id[ctl.target]
            for local, c in enumerate(net.intersection_connections[n]):
                state, _ = effective_connection_state(
                    cur.states[local], tgt.states[local], ctl.in_yellow
                )
                out[c.id] = (state != RED, state == GREEN_PRIORITY)
        return out

    def _yield_blocked(self, conn, open_prio: dict[int, tuple[bool, bool]]) -> bool:
        # a green-yield movement waits while any conflicting priority approach
        # (different in-road, same out-road, open with priority) is occupied
        # within the yield zone of its stop line
        net = self.network
        my_in_road = net.lanes[conn.in_lane].road_id
        my_out_road = net.lanes[conn.out_lane].road_id
        for other in net.intersection_connections[conn.intersection]:
            if other.id == conn.id:
                continue
            is_open, has_prio = open_prio[other.id]
            if not (is_open and has_prio):
                continue
            if net.lanes[other.in_lane].road_id == my_in_road:
                continue
            if net.lanes[other.out_lane].road_id != my_out_road:
                continue
            in_lane = net.lanes[other.in_lane]
            for v in self.lane_vehicles[other.in_lane]:
                if in_lane.length - v.pos <= self.cfg.yield_zone:
                    return True
        return False

    def _move(self):
        net = self.network
        cfg = self.cfg
        open_prio = self._effective_states()
        for lane_id in net.lane_ids:
            vehicles = self.lane_vehicles[lane_id]
            if not vehicles:
                continue
            lane = net.lanes[lane_id]
            for veh in sorted(vehicles, key=lambda v: -v.pos):
                if veh.moved:
                    continue
                veh.moved = True
                ahead = [
                    v for v in self.lane_vehicles[veh.lane]
                    if v is not veh and v.pos > veh.pos
                ]
                if ahead:
                    leader_back = min(v.pos for v in ahead) - cfg.veh_length
                    free = leader_back - cfg.min_gap - veh.pos
                else:
                    free = self._free_past_end(veh, lane, open_prio)
                speed = min(veh.speed + cfg.accel, lane.speed_limit, max(free, 0.0))
                veh.speed = speed
                veh.pos += speed
                if veh.pos > lane.length and not ahead:
                    self._cross_or_complete(veh, lane)
        for vs in self.lane_vehicles.values():
            for v in vs:
                v.moved = False

    def _free_past_end(self, veh: Vehicle, lane, open_prio) -> float:
        """Distance the lane leader may advance, possibly into the next lane."""
        cfg = self.cfg
        to_end = lane.length - veh.pos
        if veh.route_pos == len(veh.route) - 1:
            return to_end + cfg.veh_length  # exit: clear the lane entirely
        nxt = veh.route[veh.route_pos + 1]
        conn = next(
            (c for c in self.network.out_connections[veh.lane] if c.out_lane == nxt),
            None,
        )
        if conn is None:
            raise RuntimeError(f"route of vehicle {veh.id} skips a connection")
        is_open, has_prio = open_prio[conn.id]
        if not is_open:
            return to_end
        if not has_prio and self._yield_blocked(conn, open_prio):
            return to_end
        next_vehicles = self.lane_vehicles[nxt]
        next_lane = self.network.lanes[nxt]
        if next_vehicles:
            back = min(v.pos for v in next_vehicles) - cfg.veh_length
            allowance = back - cfg.min_gap
        else:
            allowance = next_lane.length
        return to_end + max(allowance, 0.0)

    def _cross_or_complete(self, veh: Vehicle, lane):
        self.lane_vehicles[veh.lane].remove(veh)
        overshoot = veh.pos - lane.length
        if veh.route_pos == len(veh.route) - 1:
            self.completed_count += 1
            self.completed.append(
                CompletedTrip(veh.id, veh.trip_index, veh.insert_t, self.t, veh.delay)
            )
            self._last_completed.append(self.completed[-1])
            return
        veh.route_pos += 1
        veh.pos = overshoot
        self.lane_vehicles[veh.lane].append(veh)

    # -- metrics ----------------------------------------------------------------

    def queue_count(self, lane_id: str) -> int:
        lane = self.network.lanes[lane_id]
        cfg = self.cfg
        return sum(
            1
            for v in self.lane_vehicles[lane_id]
            if v.speed < cfg.stop_speed and lane.length - v.pos <= cfg.queue_zone
        )

    def instantaneous_delay(self) -> float:
        d = 0.0
        for lane_id, vehicles in self.lane_vehicles.items():
            limit = self.network.lanes[lane_id].speed_limit
            for v in vehicles:
                d += (limit - v.speed) / limit
        return d

    def pending_count(self) -> int:
        return sum(len(q) for q in self.pending.values())

    def vehicles_in_network(self) -> int:
        return sum(len(v) for v in self.lane_vehicles.values())

    def all_trips_done(self) -> bool:
        return (
            self._trip_cursor >= len(self.trips)
            and not self.pending
            and self.vehicles_in_network() == 0
        )

    def total_delay(self) -> float:
        """Delay over all trips so far: completed, in-network, and still queued."""
        total = sum(c.delay for c in self.completed)
        total += sum(v.delay for vs in self.lane_vehicles.values() for v in vs)
        total += sum(self.t - tr.time for q in self.pending.values() for _, tr in q)
        return total

    # -- stepping -----------------------------------------------------------------

    def step(self, action: dict[str, int]) -> StepOutcome:
        self._last_completed: list[CompletedTrip] = []
        self._apply_action(action)
        self._tick_pre()
        self._insert()
        self._move()
        self._tick_post()

        net = self.network
        lane_rewards = np.zeros(len(net.lane_ids))
        for i, lane_id in enumerate(net.lane_ids):
            lane_rewards[i] = -self.queue_count(lane_id)
        d_t = self.instantaneous_delay()
        pending = self.pending_count()
        for lane_id, vehicles in self.lane_vehicles.items():
            limit = net.lanes[lane_id].speed_limit
            for v in vehicles:
                v.delay += (limit - v.speed) / limit
        self.t += 1
        return StepOutcome(
            lane_rewards=lane_rewards,
            global_reward=float(lane_rewards.sum()),
            d_t=d_t,
            pending_count=pending,
            completed=self._last_completed,
        )

    def hold_action(self) -> dict[str, int]:
        """The always-legal action: keep every controller on its course."""
        out = {}
        for n, ctl in self.controllers.items():
            out[n] = ctl.target if ctl.in_yellow else ctl.current
        return out
