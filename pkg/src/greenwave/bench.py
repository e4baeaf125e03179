"""Experiment orchestration: network pools, training cells, paired zero-shot
evaluation on unseen networks, and the large-grid scalability smoke test."""

from __future__ import annotations

import hashlib
import json
import os
import time
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .baselines import fixed_time_action, greedy_action
from .checkpoint import load_params
from .config import Config
from .graphobs import encode_observation
from .model import ModelParams, zero_noise
from .netmodel import (
    NetworkGenConfig,
    RoadNetwork,
    Trip,
    fresh_trip_process,
    generate_network,
    generate_trips,
    network_to_json,
    save_network,
    trips_to_json,
)
from .planner import plan, plan_independent
from .sim import TrafficSim
from .trainer import (
    METHOD_CONSTRAINTS,
    TRAINED_METHODS,
    HyperParams,
    TrainResult,
    assign_constraints,
    greedy_q_action,
    run_training,
)


class MissingArtifact(Exception):
    pass


class PairingError(Exception):
    """Raised when per-trip results from different methods used different trips."""


BASELINE_METHODS = ("fixed-time", "greedy")
ALL_METHODS = BASELINE_METHODS + TRAINED_METHODS


def _mix(*parts) -> np.random.SeedSequence:
    """Stable stream key from ints and strings; strings hash via crc32."""
    key = [p if isinstance(p, int) else zlib.crc32(str(p).encode()) for p in parts]
    return np.random.SeedSequence(key)


def stream(*parts) -> np.random.Generator:
    return np.random.default_rng(_mix(*parts))


def derive_seed(*parts) -> int:
    return int(_mix(*parts).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    seeds: int = 5
    train_nets: int = 10
    val_nets: int = 10
    test_nets: int = 10
    min_intersections: int = 2
    max_intersections: int = 3
    eval_minutes: int = 10
    eval_max_steps: int = 7200
    reference: str = "mujam-a"
    smoke_grid: int = 10
    smoke_warm_minutes: int = 30
    smoke_eval_minutes: int = 60

    @classmethod
    def from_config(cls, cfg: Config) -> "ExperimentConfig":
        return cls(
            seeds=cfg.getint("seeds"),
            train_nets=cfg.getint("train_nets"),
            val_nets=cfg.getint("val_nets"),
            test_nets=cfg.getint("test_nets"),
            min_intersections=cfg.getint("min_intersections"),
            max_intersections=cfg.getint("max_intersections"),
            eval_minutes=cfg.getint("eval_minutes"),
            eval_max_steps=cfg.getint("eval_max_steps"),
            reference=cfg.getstr("reference"),
            smoke_grid=cfg.getint("smoke_grid"),
            smoke_warm_minutes=cfg.getint("smoke_warm_minutes"),
            smoke_eval_minutes=cfg.getint("smoke_eval_minutes"),
        )


# -- pools -------------------------------------------------------------------------


@dataclass
class Pools:
    train: list[RoadNetwork]
    val: list[RoadNetwork]
    test: list[RoadNetwork]
    val_trips: list[list[Trip]]


def network_signature(net: RoadNetwork) -> str:
    return hashlib.sha256(network_to_json(net).encode()).hexdigest()


def _gen_pool(base_seed: int, salt: int, count: int, ecfg: ExperimentConfig, taken: set[str]):
    nets = []
    attempt = 0
    while len(nets) < count:
        seed = derive_seed(base_seed, salt, attempt)
        attempt += 1
        net = generate_network(
            NetworkGenConfig(
                intersection_range=(ecfg.min_intersections, ecfg.max_intersections),
                seed=seed,
            )
        )
        sig = network_signature(net)
        if sig in taken:
            continue  # keeps train/val/test pools disjoint
        taken.add(sig)
        nets.append(net)
    return nets


def build_pools(base_seed: int, ecfg: ExperimentConfig, episode_steps: int) -> Pools:
    taken: set[str] = set()
    train = _gen_pool(base_seed, 11, ecfg.train_nets, ecfg, taken)
    val = _gen_pool(base_seed, 13, ecfg.val_nets, ecfg, taken)
    test = _gen_pool(base_seed, 17, ecfg.test_nets, ecfg, taken)
    val_trips = []
    for i, net in enumerate(val):
        rng = stream(base_seed, 19, i)
        tp = fresh_trip_process(net, rng)
        val_trips.append(generate_trips(net, tp, episode_steps, rng))
    return Pools(train, val, test, val_trips)


# -- training cells ----------------------------------------------------------------


def train_cell(
    method: str,
    seed_idx: int,
    base_seed: int,
    pools: Pools,
    hp: HyperParams,
    out_root: Optional[str] = None,
    quiet: bool = True,
) -> TrainResult:
    """Train one (method, seed) instance on constraint-assigned copies of the pool."""
    if method not in TRAINED_METHODS:
        raise ValueError(f"not a trainable method: {method}")
    mode = METHOD_CONSTRAINTS[method]
    crng = stream(base_seed, method, seed_idx, "constraints")
    train_nets = [assign_constraints(n, mode, crng) for n in pools.train]
    val_sets = [
        (assign_constraints(n, mode, crng), trips)
        for n, trips in zip(pools.val, pools.val_trips)
    ]
    out_dir = None
    log_path = None
    if out_root is not None:
        out_dir = os.path.join(out_root, "train", method, f"seed{seed_idx}")
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "training_log.csv")
    run_seed = derive_seed(base_seed, method, seed_idx, "run")
    return run_training(
        method, train_nets, val_sets, hp, run_seed,
        out_dir=out_dir, log_path=log_path, quiet=quiet,
    )


def checkpoint_path(out_root: str, method: str, seed_idx: int, kind: str = "best") -> str:
    return os.path.join(out_root, "train", method, f"seed{seed_idx}", f"{kind}.bin")


def load_checkpoint(path: str) -> ModelParams:
    if not os.path.exists(path):
        raise MissingArtifact(f"checkpoint not found: {path}")
    return load_params(path)


# -- evaluation ---------------------------------------------------------------------


def make_actor(
    method: str,
    hp: HyperParams,
    rng: np.random.Generator,
    params: Optional[ModelParams] = None,
) -> Callable[[TrafficSim], dict[str, int]]:
    """Deterministic evaluation actor; learned methods act with noise zeroed."""
    if method == "fixed-time":
        return fixed_time_action
    if method == "greedy":
        return greedy_action
    if params is None:
        raise MissingArtifact(f"method {method} needs a checkpoint")
    zero_noise(params)
    if method == "mfgrl":
        return lambda sim: greedy_q_action(params, encode_observation(sim))
    cfg = hp.search_config(root_noise=False)
    if method == "muim":
        return lambda sim: plan_independent(sim, params, cfg, rng).action
    return lambda sim: plan(sim, params, cfg, rng).action


@dataclass
class EvalEpisode:
    method: str
    total_delay: float
    steps: int
    finished: bool
    per_trip: dict[int, float]
    d_series: np.ndarray
    mean_step_seconds: float


def run_eval_episode(
    net: RoadNetwork,
    trips: list[Trip],
    actor: Callable,
    max_steps: int,
    method: str = "",
) -> EvalEpisode:
    sim = TrafficSim(net, trips)
    d_series = []
    steps = 0
    t0 = time.perf_counter()
    while steps < max_steps and not sim.all_trips_done():
        out = sim.step(actor(sim))
        d_series.append(out.d_t)
        steps += 1
    elapsed = time.perf_counter() - t0
    return EvalEpisode(
        method=method,
        total_delay=float(sim.total_delay()),
        steps=steps,
        finished=sim.all_trips_done(),
        per_trip={c.trip_index: c.delay for c in sim.completed},
        d_series=np.array(d_series),
        mean_step_seconds=elapsed / max(steps, 1),
    )


def trip_hash(trips: list[Trip]) -> str:
    return hashlib.sha256(trips_to_json(trips).encode()).hexdigest()


def summarize(delays: np.ndarray) -> dict[str, float]:
    if len(delays) == 0:
        return {"count": 0, "mean": 0.0, "median": 0.0, "q1": 0.0, "q3": 0.0}
    return {
        "count": int(len(delays)),
        "mean": float(np.mean(delays)),
        "median": float(np.median(delays)),
        "q1": float(np.percentile(delays, 25)),
        "q3": float(np.percentile(delays, 75)),
    }


@dataclass
class MetricsReport:
    methods: list[str]
    reference: str
    # (method, net_idx, seed_idx, trip_index) -> per-trip delay
    per_trip_rows: list[tuple[str, int, int, int, float]] = field(default_factory=list)
    per_step: dict[tuple[str, int, int], np.ndarray] = field(default_factory=dict)
    totals: dict[str, dict[str, float]] = field(default_factory=dict)
    paired: dict[str, list[float]] = field(default_factory=dict)
    summary: dict[str, dict[str, float]] = field(default_factory=dict)
    trip_hashes: dict[str, str] = field(default_factory=dict)
    unfinished: list[tuple[str, int, int]] = field(default_factory=list)


def _cell_key(net_idx: int, seed_idx: int) -> str:
    return f"net{net_idx}/seed{seed_idx}"


def pair_trip_delays(
    rows_by_method: dict[str, dict[tuple[int, int, int], float]],
    hashes_by_method: dict[str, dict[str, str]],
    reference: str,
) -> dict[str, list[float]]:
    """Per-trip delay differences vs the reference, refusing mismatched trip sets."""
    if reference not in rows_by_method:
        raise MissingArtifact(f"reference method {reference} missing from results")
    ref_hashes = hashes_by_method[reference]
    paired: dict[str, list[float]] = {}
    ref_rows = rows_by_method[reference]
    for method, rows in rows_by_method.items():
        if method == reference:
            continue
        for cell, h in hashes_by_method[method].items():
            if cell in ref_hashes and ref_hashes[cell] != h:
                raise PairingError(
                    f"trip sets differ between {method} and {reference} at {cell}"
                )
        diffs = []
        for key, delay in sorted(rows.items()):
            if key in ref_rows:
                diffs.append(delay - ref_rows[key])
        paired[method] = diffs
    return paired


def run_experiment1(
    test_nets: list[RoadNetwork],
    methods: list[str],
    params_by_method: dict[str, list[ModelParams]],
    hp: HyperParams,
    ecfg: ExperimentConfig,
    base_seed: int,
    reference: Optional[str] = None,
    quiet: bool = True,
) -> MetricsReport:
    """Zero-shot transfer protocol: identical 10-minute trip sets per (network,
    seed) cell, every method runs each to completion, per-trip delays paired
    against the reference method."""
    reference = reference or ecfg.reference
    if reference not in methods:
        reference = methods[0]
    report = MetricsReport(methods=list(methods), reference=reference)
    rows_by_method: dict[str, dict[tuple[int, int, int], float]] = {m: {} for m in methods}
    hashes_by_method: dict[str, dict[str, str]] = {m: {} for m in methods}
    duration = ecfg.eval_minutes * 60

    for net_idx, net in enumerate(test_nets):
        for s in range(ecfg.seeds):
            trng = stream(base_seed, "eval-trips", net_idx, s)
            tp = fresh_trip_process(net, trng)
            trips = generate_trips(net, tp, duration, trng)
            cell = _cell_key(net_idx, s)
            report.trip_hashes[cell] = trip_hash(trips)
            for method in methods:
                seeds_params = params_by_method.get(method)
                params = None
                if method not in BASELINE_METHODS:
                    if not seeds_params:
                        raise MissingArtifact(f"no checkpoints for {method}")
                    params = seeds_params[s % len(seeds_params)]
                arng = stream(base_seed, "eval-act", method, net_idx, s)
                actor = make_actor(method, hp, arng, params)
                ep = run_eval_episode(net, trips, actor, ecfg.eval_max_steps, method)
                report.totals.setdefault(method, {})[cell] = ep.total_delay
                report.per_step[(method, net_idx, s)] = ep.d_series
                hashes_by_method[method][cell] = report.trip_hashes[cell]
                if not ep.finished:
                    report.unfinished.append((method, net_idx, s))
                for trip_index, delay in ep.per_trip.items():
                    report.per_trip_rows.append((method, net_idx, s, trip_index, delay))
                    rows_by_method[method][(net_idx, s, trip_index)] = delay
                if not quiet:
                    print(
                        f"[eval] {method} net {net_idx} seed {s}: "
                        f"delay {ep.total_delay:.0f} over {ep.steps} steps",
                        flush=True,
                    )

    report.paired = pair_trip_delays(rows_by_method, hashes_by_method, reference)
    for method in methods:
        delays = np.array([v for v in rows_by_method[method].values()])
        report.summary[method] = summarize(delays)
    return report


def mean_total_delay(report: MetricsReport, method: str) -> float:
    cells = report.totals[method]
    return float(np.mean(list(cells.values())))


def report_to_json(report: MetricsReport) -> str:
    doc = {
        "methods": report.methods,
        "reference": report.reference,
        "totals": report.totals,
        "summary": report.summary,
        "paired_mean": {
            m: (float(np.mean(v)) if len(v) else 0.0) for m, v in report.paired.items()
        },
        "trip_hashes": report.trip_hashes,
        "unfinished": [list(x) for x in report.unfinished],
    }
    return json.dumps(doc, sort_keys=True, indent=1)


# -- scalability smoke --------------------------------------------------------------


@dataclass
class SmokeReport:
    n_intersections: int
    warm_steps: int
    eval_steps: int
    cum_diff: np.ndarray  # cumulative (policy d_t - fixed-time d_t), eval phase
    mean_latency_s: float  # decision + simulation per step, policy side
    final_diff: float


def run_smoke_scale(
    params: ModelParams,
    hp: HyperParams,
    ecfg: ExperimentConfig,
    base_seed: int,
    quiet: bool = True,
) -> SmokeReport:
    """Square grid at scale, fixed-time warm start, then prior-greedy control
    with a null search budget against a fixed-time twin on identical trips."""
    g = ecfg.smoke_grid
    gcfg = NetworkGenConfig(
        intersection_range=(g * g, g * g),
        seed=derive_seed(base_seed, "smoke-net"),
        grid_shape=(g, g),
    )
    net = generate_network(gcfg)
    rng = stream(base_seed, "smoke-trips")
    warm_steps = ecfg.smoke_warm_minutes * 60
    eval_steps = ecfg.smoke_eval_minutes * 60
    tp = fresh_trip_process(net, rng)
    trips = generate_trips(net, tp, warm_steps + eval_steps, rng)

    sim_fixed = TrafficSim(net, trips)
    sim_policy = TrafficSim(net, trips)
    for _ in range(warm_steps):
        sim_fixed.step(fixed_time_action(sim_fixed))
        sim_policy.step(fixed_time_action(sim_policy))

    zero_noise(params)
    cfg0 = hp.search_config(root_noise=False, beta=0)
    arng = stream(base_seed, "smoke-act")
    diffs = []
    latencies = []
    for k in range(eval_steps):
        out_f = sim_fixed.step(fixed_time_action(sim_fixed))
        t0 = time.perf_counter()
        action = plan(sim_policy, params, cfg0, arng).action
        out_p = sim_policy.step(action)
        latencies.append(time.perf_counter() - t0)
        diffs.append(out_p.d_t - out_f.d_t)
        if not quiet and (k + 1) % 600 == 0:
            print(
                f"[smoke] step {k + 1}/{eval_steps}, cum diff {np.sum(diffs):.0f}",
                flush=True,
            )
    cum = np.cumsum(diffs)
    return SmokeReport(
        n_intersections=len(net.intersections),
        warm_steps=warm_steps,
        eval_steps=eval_steps,
        cum_diff=cum,
        mean_latency_s=float(np.mean(latencies)),
        final_diff=float(cum[-1]),
    )


def smoke_report_to_json(rep: SmokeReport) -> str:
    return json.dumps(
        {
            "n_intersections": rep.n_intersections,
            "warm_steps": rep.warm_steps,
            "eval_steps": rep.eval_steps,
            "mean_latency_s": rep.mean_latency_s,
            "final_diff": rep.final_diff,
        },
        sort_keys=True,
        indent=1,
    )


# -- constraint regimes over the test pool ---------------------------------------------


REGIME_METHODS = {
    "cyclic": ["fixed-time", "greedy", "mfgrl", "mujam-c", "mujam", "muim", "mujam-nnl", "mujam-nr"],
    "acyclic": ["fixed-time", "mujam-a", "mujam"],
    "hybrid": ["fixed-time", "mujam"],
}

REGIME_REFERENCE = {
    "cyclic": "mujam-c",
    "acyclic": "mujam-a",
    "hybrid": "mujam",
}


def constrained_test_nets(
    test: list[RoadNetwork], regime: str, base_seed: int
) -> list[RoadNetwork]:
    out = []
    for i, net in enumerate(test):
        rng = stream(base_seed, "test-regime", regime, i)
        out.append(assign_constraints(net, regime, rng))
    return out


def save_pools(pools: Pools, out_root: str):
    nets_dir = os.path.join(out_root, "nets")
    os.makedirs(nets_dir, exist_ok=True)
    for tag, nets in (("train", pools.train), ("val", pools.val), ("test", pools.test)):
        for i, net in enumerate(nets):
            save_network(net, os.path.join(nets_dir, f"{tag}_{i:02d}.json"))
