"""Connection features and the manual signal-state rollforward.

Planning advances controller state without touching the simulator, so the
snapshot automaton below reimplements the switching rules on its own. Keep it
independent of sim.TrafficSim's controller code: the two implementations are
cross-checked against each other in tests, which only means something while
they do not share logic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netmodel import ACYCLIC, GREEN_PRIORITY, RED, RoadNetwork
from .sim import IllegalAction

N_CONN_FEATURES = 8


class StaticTables:
    """Per-network constants for feature extraction, padded per cycle position."""

    def __init__(self, net: RoadNetwork):
        self.net = net
        ints = net.intersections
        self.int_index = {n: i for i, n in enumerate(ints)}
        self.n_int = len(ints)
        self.n_conn = len(net.connections)
        self.n_phase = len(net.phases)

        self.conn_int = np.zeros(self.n_conn, dtype=np.int64)
        conn_local = np.zeros(self.n_conn, dtype=np.int64)
        for j, c in enumerate(net.connections):
            self.conn_int[j] = self.int_index[c.intersection]
            conn_local[j] = net.intersection_connections[c.intersection].index(c)

        self.acyclic = np.array(
            [net.programs[n].constraint_type == ACYCLIC for n in ints], dtype=bool
        )
        self.min_phase = np.array(
            [net.programs[n].min_phase_duration for n in ints]
        )
        self.yellow_duration = np.array(
            [int(net.programs[n].yellow_duration) for n in ints], dtype=np.int64
        )
        self.cycle_len = np.array(
            [len(net.programs[n].phase_order) for n in ints], dtype=np.int64
        )

        # cycle position of every phase, and per-intersection cycle order
        self.phase_pos: dict[int, int] = {}
        self.cycle_order: list[list[int]] = []
        for i, n in enumerate(ints):
            order = list(net.programs[n].phase_order)
            self.cycle_order.append(order)
            for pos, pid in enumerate(order):
                self.phase_pos[pid] = pos

        max_p = int(self.cycle_len.max())
        self.max_cycle = max_p
        # state_pad[j, p] = signal state of connection j in the phase at cycle
        # position p of its intersection (positions past the cycle wrap)
        self.state_pad = np.zeros((self.n_conn, max_p), dtype=np.int64)
        self.next_open_pad = np.zeros((self.n_conn, max_p))
        self.k_open_pad = np.zeros((self.n_conn, max_p))
        self.next_prio_pad = np.zeros((self.n_conn, max_p))
        for j, c in enumerate(net.connections):
            i = self.conn_int[j]
            order = self.cycle_order[i]
            P = len(order)
            states = [
                net.phase_by_id[pid].states[conn_local[j]] for pid in order
            ]
            for p in range(max_p):
                pp = p % P
                self.state_pad[j, p] = states[pp]
                self.next_open_pad[j, p] = float(states[(pp + 1) % P] != RED)
                k = next(kk for kk in range(P) if states[(pp + kk) % P] != RED)
                self.k_open_pad[j, p] = float(k)
                self.next_prio_pad[j, p] = float(
                    states[(pp + k) % P] == GREEN_PRIORITY
                )

        # phase ids per intersection, and the global node order of phases
        self.global_phase_index = {p.id: k for k, p in enumerate(net.phases)}
        self.phase_int = np.array(
            [self.int_index[p.intersection] for p in net.phases], dtype=np.int64
        )

        # drops_green[(a, b)]: switching a -> b turns some green connection red
        self.drops_green: dict[tuple[int, int], bool] = {}
        for n in ints:
            local = [net.phase_by_id[pid] for pid in net.programs[n].phase_order]
            for pa in local:
                for pb in local:
                    self.drops_green[(pa.id, pb.id)] = any(
                        a != RED and b == RED for a, b in zip(pa.states, pb.states)
                    )

        self.feat_cache: dict[tuple[bytes, bytes, bytes], np.ndarray] = {}


def get_tables(net: RoadNetwork) -> StaticTables:
    if net._tables is None:
        net._tables = StaticTables(net)
    return net._tables


@dataclass
class ControllerSnapshot:
    """Signal state of every controller, detached from the simulator."""

    tables: StaticTables
    current: np.ndarray  # phase id per intersection
    target: np.ndarray
    yellow_remaining: np.ndarray
    tsls: np.ndarray

    def copy(self) -> "ControllerSnapshot":
        return ControllerSnapshot(
            self.tables,
            self.current.copy(),
            self.target.copy(),
            self.yellow_remaining.copy(),
            self.tsls.copy(),
        )

    @property
    def in_yellow(self) -> np.ndarray:
        return self.target != self.current

    def legal_phase_ids(self, int_idx: int) -> list[int]:
        t = self.tables
        if self.current[int_idx] != self.target[int_idx]:
            return [int(self.target[int_idx])]
        if self.tsls[int_idx] < t.min_phase[int_idx]:
            return [int(self.current[int_idx])]
        order = t.cycle_order[int_idx]
        cur = int(self.current[int_idx])
        if not t.acyclic[int_idx]:
            nxt = order[(t.phase_pos[cur] + 1) % len(order)]
            return [cur] if nxt == cur else [cur, nxt]
        return list(order)

    def legal_mask(self) -> np.ndarray:
        """Boolean over the network's global phase list."""
        t = self.tables
        mask = np.zeros(t.n_phase, dtype=bool)
        for i in range(t.n_int):
            for pid in self.legal_phase_ids(i):
                mask[t.global_phase_index[pid]] = True
        return mask


def snapshot_from_sim(sim) -> ControllerSnapshot:
    t = get_tables(sim.network)
    n = t.n_int
    cur = np.zeros(n, dtype=np.int64)
    tgt = np.zeros(n, dtype=np.int64)
    yel = np.zeros(n, dtype=np.int64)
    tsls = np.zeros(n, dtype=np.int64)
    for name, ctl in sim.controllers.items():
        i = t.int_index[name]
        cur[i] = ctl.current
        tgt[i] = ctl.target
        yel[i] = ctl.yellow_remaining
        tsls[i] = ctl.tsls
    return ControllerSnapshot(t, cur, tgt, yel, tsls)


def advance_snapshot(snap: ControllerSnapshot, action: dict[str, int]) -> ControllerSnapshot:
    """One second of controller evolution under a joint action.

    Mirrors what the simulator does to signal state across a step: the action
    is applied, a second elapses, and any finished yellow interstage activates
    its target. Raises IllegalAction on a request the rules forbid.
    """
    t = snap.tables
    out = snap.copy()
    names = t.net.intersections
    for i, name in enumerate(names):
        if name not in action:
            raise IllegalAction(name, -1, "no phase selected")
        pid = action[name]
        if pid not in snap.legal_phase_ids(i):
            raise IllegalAction(name, pid, "not in the legal set")
        switching = out.current[i] != out.target[i]
        if not switching and pid != out.current[i]:
            out.tsls[i] = 0
            if t.drops_green[(int(out.current[i]), pid)]:
                out.target[i] = pid
                out.yellow_remaining[i] = t.yellow_duration[i]
            else:
                out.current[i] = pid
                out.target[i] = pid
        out.tsls[i] += 1
        if out.current[i] != out.target[i]:
            out.yellow_remaining[i] -= 1
            if out.yellow_remaining[i] <= 0:
                out.current[i] = out.target[i]
    return out


def connection_features(snap: ControllerSnapshot) -> np.ndarray:
    """(n_connections, 8) feature matrix, shared by observation and planning.

    Columns: constraint type, time since last switch (/60, clipped), is open,
    is yellow, has priority, next switch open, switches to open (/cycle
    length), next opening has priority. The last three are -1 under acyclic
    constraints.
    """
    t = snap.tables
    # memoized: identical signal state (tsls saturates at the 60 s clip) is
    # frequent both across search trajectories and across consecutive steps
    key = (
        snap.current.tobytes(),
        snap.target.tobytes(),
        np.minimum(snap.tsls, 60).tobytes(),
    )
    hit = t.feat_cache.get(key)
    if hit is not None:
        return hit
    ci = snap.tables.conn_int
    rows = np.arange(t.n_conn)

    cur_pos = np.array([t.phase_pos[int(p)] for p in snap.current], dtype=np.int64)
    tgt_pos = np.array([t.phase_pos[int(p)] for p in snap.target], dtype=np.int64)
    in_y = snap.in_yellow[ci]

    cur_state = t.state_pad[rows, cur_pos[ci]]
    tgt_state = t.state_pad[rows, tgt_pos[ci]]
    eff = np.where(in_y, np.minimum(cur_state, tgt_state), cur_state)

    acyc = t.acyclic[ci]
    look_pos = np.where(in_y, tgt_pos[ci], cur_pos[ci])

    f = np.zeros((t.n_conn, N_CONN_FEATURES))
    f[:, 0] = acyc.astype(float)
    f[:, 1] = np.clip(snap.tsls[ci] / 60.0, 0.0, 1.0)
    f[:, 2] = (eff != RED).astype(float)
    f[:, 3] = (in_y & (cur_state != RED) & (tgt_state == RED)).astype(float)
    f[:, 4] = (eff == GREEN_PRIORITY).astype(float)
    f[:, 5] = np.where(acyc, -1.0, t.next_open_pad[rows, look_pos])
    f[:, 6] = np.where(acyc, -1.0, t.k_open_pad[rows, look_pos] / t.cycle_len[ci])
    f[:, 7] = np.where(acyc, -1.0, t.next_prio_pad[rows, look_pos])
    f.flags.writeable = False
    if len(t.feat_cache) >= 16384:
        t.feat_cache.clear()
    t.feat_cache[key] = f
    return f
