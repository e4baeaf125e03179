"""Heuristic signal policies: open-loop fixed-time cycling and queue-greedy switching."""

from __future__ import annotations

from .netmodel import next_cycle_phase
from .sim import TrafficSim

FIXED_TIME_PERIOD = 30  # seconds between switch begins


def fixed_time_action(sim: TrafficSim, period: int = FIXED_TIME_PERIOD) -> dict[str, int]:
    """Advance every intersection to its next cycle phase on a fixed timer.

    Ignores traffic entirely; the timer counts from the last switch begin, so
    consecutive switch begins are exactly `period` seconds apart.
    """
    net = sim.network
    action = {}
    for name in net.intersections:
        ctrl = sim.controllers[name]
        if ctrl.in_yellow:
            action[name] = ctrl.target
        elif ctrl.tsls >= period:
            action[name] = next_cycle_phase(net, net.programs[name], ctrl.current).id
        else:
            action[name] = ctrl.current
    return action


def _inbound_counts(sim: TrafficSim, intersection: str) -> tuple[int, int]:
    lanes = sorted({c.in_lane for c in sim.network.intersection_connections[intersection]})
    stopped = 0
    moving = 0
    for lane_id in lanes:
        for v in sim.lane_vehicles[lane_id]:
            if v.speed < sim.cfg.stop_speed:
                stopped += 1
            else:
                moving += 1
    return stopped, moving


def greedy_action(sim: TrafficSim) -> dict[str, int]:
    """Switch to the next cycle phase once strictly more inbound vehicles are
    stopped than moving, provided the switch is legal; otherwise hold."""
    net = sim.network
    action = {}
    for name in net.intersections:
        ctrl = sim.controllers[name]
        hold = ctrl.target if ctrl.in_yellow else ctrl.current
        action[name] = hold
        if ctrl.in_yellow:
            continue
        nxt = next_cycle_phase(net, net.programs[name], hold).id
        if nxt == hold or nxt not in {p.id for p in sim.legal_phases(name)}:
            continue
        stopped, moving = _inbound_counts(sim, name)
        if stopped > moving:
            action[name] = nxt
    return action


BASELINE_ACTORS = {
    "fixed-time": fixed_time_action,
    "greedy": greedy_action,
}
