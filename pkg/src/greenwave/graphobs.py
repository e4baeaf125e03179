"""Typed feature-graph observations extracted from simulator state."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .connectivity import (
    ControllerSnapshot,
    StaticTables,
    connection_features,
    get_tables,
    snapshot_from_sim,
)
from .netmodel import RED, RoadNetwork

LANE_LENGTH_SCALE = 200.0


class GraphIndex:
    """Static edge lists of one network, in the model's node orderings.

    Lanes follow network.lane_ids, connections follow network.connections,
    phases follow network.phases. Every connection contributes a
    lane-to-lane edge in both directions (is_inbound distinguishes them) and
    two lane-to-connection edges; every phase receives one edge from each
    connection of its intersection.
    """

    def __init__(self, net: RoadNetwork, tables: StaticTables):
        self.n_lane = len(net.lane_ids)
        self.n_conn = len(net.connections)
        self.n_phase = len(net.phases)
        self.lane_feat = np.array(
            [[net.lanes[l].length / LANE_LENGTH_SCALE] for l in net.lane_ids]
        )

        ll_src, ll_dst, ll_in, ll_conn = [], [], [], []
        lc_src, lc_dst, lc_in, lc_conn = [], [], [], []
        for j, c in enumerate(net.connections):
            a = net.lane_index[c.in_lane]
            b = net.lane_index[c.out_lane]
            ll_src += [a, b]
            ll_dst += [b, a]
            ll_in += [1.0, 0.0]
            ll_conn += [j, j]
            lc_src += [a, b]
            lc_dst += [j, j]
            lc_in += [1.0, 0.0]
            lc_conn += [j, j]
        self.ll_src = np.array(ll_src, dtype=np.int64)
        self.ll_dst = np.array(ll_dst, dtype=np.int64)
        self.ll_inbound = np.array(ll_in)[:, None]
        self.ll_conn = np.array(ll_conn, dtype=np.int64)
        self.lc_src = np.array(lc_src, dtype=np.int64)
        self.lc_dst = np.array(lc_dst, dtype=np.int64)
        self.lc_inbound = np.array(lc_in)[:, None]
        self.lc_conn = np.array(lc_conn, dtype=np.int64)
        self.ll_src_feat = self.lane_feat[self.ll_src]
        self.lc_src_feat = self.lane_feat[self.lc_src]
        # lane-to-lane edge blocks keyed by the conn_feat array they extend;
        # values keep the key array alive so the ids stay valid
        self._ll_edge_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

        conn_pos = {c.id: j for j, c in enumerate(net.connections)}
        cp_src, cp_dst, cp_opens = [], [], []
        for k, p in enumerate(net.phases):
            conns = net.intersection_connections[p.intersection]
            for local, c in enumerate(conns):
                cp_src.append(conn_pos[c.id])
                cp_dst.append(k)
                cp_opens.append(float(p.states[local] != RED))
        self.cp_src = np.array(cp_src, dtype=np.int64)
        self.cp_dst = np.array(cp_dst, dtype=np.int64)
        self.cp_opens = np.array(cp_opens)[:, None]
        self.phase_int = tables.phase_int

    def ll_edge(self, conn_feat: np.ndarray) -> np.ndarray:
        hit = self._ll_edge_cache.get(id(conn_feat))
        if hit is not None:
            return hit[1]
        edge = np.concatenate([self.ll_inbound, conn_feat[self.ll_conn]], axis=1)
        edge.flags.writeable = False
        if len(self._ll_edge_cache) >= 16384:
            self._ll_edge_cache.clear()
        self._ll_edge_cache[id(conn_feat)] = (conn_feat, edge)
        return edge


def get_graph_index(net: RoadNetwork) -> GraphIndex:
    tables = get_tables(net)
    if getattr(tables, "graph", None) is None:
        tables.graph = GraphIndex(net, tables)
    return tables.graph


@dataclass
class GraphObservation:
    graph: GraphIndex
    veh_feat: np.ndarray  # (n_vehicles, 2): speed and lane position, both in [0,1]
    veh_lane: np.ndarray  # (n_vehicles,) lane row per vehicle
    conn_feat: np.ndarray  # (n_connections, 8)
    legal_mask: np.ndarray  # (n_phases,) bool
    snapshot: ControllerSnapshot


def encode_observation(sim) -> GraphObservation:
    net = sim.network
    graph = get_graph_index(net)
    snap = snapshot_from_sim(sim)
    conn_feat = connection_features(snap)
    legal = snap.legal_mask()

    feats, lanes = [], []
    for li, lane_id in enumerate(net.lane_ids):
        lane = net.lanes[lane_id]
        for v in sorted(sim.lane_vehicles[lane_id], key=lambda v: -v.pos):
            feats.append((v.speed / lane.speed_limit, min(v.pos / lane.length, 1.0)))
            lanes.append(li)
    veh_feat = np.array(feats) if feats else np.zeros((0, 2))
    veh_lane = np.array(lanes, dtype=np.int64) if lanes else np.zeros(0, dtype=np.int64)
    return GraphObservation(graph, veh_feat, veh_lane, conn_feat, legal, snap)


def observation_from_snapshot(
    snap: ControllerSnapshot,
    veh_feat: np.ndarray,
    veh_lane: np.ndarray,
    net: RoadNetwork,
) -> GraphObservation:
    """Rebuild an observation from stored pieces (replay storage)."""
    return GraphObservation(
        get_graph_index(net),
        veh_feat,
        veh_lane,
        connection_features(snap),
        snap.legal_mask(),
        snap,
    )
