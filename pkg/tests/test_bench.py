import json

import numpy as np
import pytest

from greenwave.bench import (
    ExperimentConfig,
    MetricsReport,
    MissingArtifact,
    PairingError,
    build_pools,
    checkpoint_path,
    derive_seed,
    load_checkpoint,
    make_actor,
    mean_total_delay,
    network_signature,
    pair_trip_delays,
    report_to_json,
    run_eval_episode,
    run_experiment1,
    stream,
    summarize,
    trip_hash,
)
from greenwave.baselines import fixed_time_action
from greenwave.model import init_params
from greenwave.netmodel import fresh_trip_process, generate_trips
from greenwave.trainer import HyperParams


def test_stream_and_derive_seed_deterministic():
    a = stream(42, "eval-trips", 3, 0).integers(1 << 30, size=5)
    b = stream(42, "eval-trips", 3, 0).integers(1 << 30, size=5)
    c = stream(42, "eval-trips", 3, 1).integers(1 << 30, size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert derive_seed(1, "x") == derive_seed(1, "x")
    assert derive_seed(1, "x") != derive_seed(1, "y")


def test_build_pools_disjoint_and_deterministic():
    ecfg = ExperimentConfig(train_nets=3, val_nets=2, test_nets=2)
    pools = build_pools(42, ecfg, episode_steps=60)
    assert (len(pools.train), len(pools.val), len(pools.test)) == (3, 2, 2)
    sigs = [network_signature(n) for n in pools.train + pools.val + pools.test]
    assert len(set(sigs)) == len(sigs)
    assert len(pools.val_trips) == 2
    again = build_pools(42, ecfg, episode_steps=60)
    assert [network_signature(n) for n in again.train + again.val + again.test] == sigs


def test_run_eval_episode_contents(small_net):
    rng = np.random.default_rng(1)
    tp = fresh_trip_process(small_net, rng)
    trips = generate_trips(small_net, tp, 120, rng)
    ep = run_eval_episode(small_net, trips, fixed_time_action, 2000, method="fixed-time")
    assert ep.method == "fixed-time"
    assert ep.finished
    assert ep.steps <= 2000
    assert len(ep.d_series) == ep.steps
    assert ep.total_delay >= 0.0
    valid = set(range(len(trips)))
    assert set(ep.per_trip) <= valid
    assert len(ep.per_trip) == len(trips)  # finished means every trip completed
    again = run_eval_episode(small_net, trips, fixed_time_action, 2000)
    assert again.total_delay == ep.total_delay
    assert np.array_equal(again.d_series, ep.d_series)


def test_trip_hash_distinguishes(small_net):
    rng = np.random.default_rng(2)
    tp = fresh_trip_process(small_net, rng)
    t1 = generate_trips(small_net, tp, 60, rng)
    t2 = generate_trips(small_net, tp, 60, rng)
    assert trip_hash(t1) == trip_hash(list(t1))
    assert trip_hash(t1) != trip_hash(t2)


def test_summarize_quartile_oracle():
    s = summarize(np.array([1.0, 2.0, 3.0, 4.0]))
    assert s == {"count": 4, "mean": 2.5, "median": 2.5, "q1": 1.75, "q3": 3.25}
    empty = summarize(np.array([]))
    assert empty["count"] == 0 and empty["mean"] == 0.0


def test_pair_trip_delays_diffs_and_guards():
    rows = {
        "ref": {(0, 0, 0): 5.0, (0, 0, 1): 7.0, (1, 0, 0): 1.0},
        "other": {(0, 0, 0): 6.5, (0, 0, 1): 6.0, (2, 0, 0): 9.0},
    }
    hashes = {
        "ref": {"net0/seed0": "h0", "net1/seed0": "h1"},
        "other": {"net0/seed0": "h0", "net2/seed0": "h2"},
    }
    paired = pair_trip_delays(rows, hashes, "ref")
    assert paired == {"other": [1.5, -1.0]}  # only shared trips, key order
    bad = {"ref": hashes["ref"], "other": {"net0/seed0": "DIFFERENT"}}
    with pytest.raises(PairingError):
        pair_trip_delays(rows, bad, "ref")
    with pytest.raises(MissingArtifact):
        pair_trip_delays(rows, hashes, "absent")


def test_make_actor_baselines_and_guards(small_net, small_trips):
    hp = HyperParams(d=8, hidden=8, beta=4)
    rng = np.random.default_rng(3)
    ft = make_actor("fixed-time", hp, rng)
    assert ft is fixed_time_action
    with pytest.raises(MissingArtifact):
        make_actor("mujam-c", hp, rng)
    params = init_params(np.random.default_rng(4), d=8, hidden=8)
    from greenwave.model import resample_noise

    resample_noise(params, np.random.default_rng(5))
    actor = make_actor("mujam-c", hp, rng, params)
    assert all(np.all(v == 0.0) for v in params.noise.values())  # eval is noise-free
    from greenwave.sim import TrafficSim

    sim = TrafficSim(small_net, small_trips)
    for _ in range(12):
        action = actor(sim)
        legal = {n: {p.id for p in sim.legal_phases(n)} for n in small_net.intersections}
        assert all(action[n] in legal[n] for n in action)
        sim.step(action)


def test_checkpoint_path_and_missing(tmp_path):
    p = checkpoint_path(str(tmp_path), "mujam-c", 2, "best")
    assert p.endswith("train/mujam-c/seed2/best.bin")
    with pytest.raises(MissingArtifact):
        load_checkpoint(p)


def test_mean_total_delay_averages_cells():
    rep = MetricsReport(methods=["greedy"], reference="greedy")
    rep.totals["greedy"] = {"net0/seed0": 10.0, "net1/seed0": 30.0}
    assert mean_total_delay(rep, "greedy") == 20.0


def test_run_experiment1_baselines_small():
    ecfg = ExperimentConfig(
        seeds=2, train_nets=1, val_nets=1, test_nets=2, eval_minutes=1, eval_max_steps=400
    )
    pools = build_pools(7, ecfg, episode_steps=30)
    hp = HyperParams(d=8, hidden=8)
    rep = run_experiment1(
        pools.test, ["fixed-time", "greedy"], {}, hp, ecfg, base_seed=7,
        reference="fixed-time",
    )
    assert rep.reference == "fixed-time"
    cells = {f"net{i}/seed{s}" for i in range(2) for s in range(2)}
    assert set(rep.totals["fixed-time"]) == cells
    assert set(rep.totals["greedy"]) == cells
    assert set(rep.trip_hashes) == cells
    assert ("greedy", 0, 0) in rep.per_step
    assert rep.summary["greedy"]["count"] > 0
    assert "greedy" in rep.paired and "fixed-time" not in rep.paired
    doc = json.loads(report_to_json(rep))
    assert doc["reference"] == "fixed-time"
    assert report_to_json(rep) == report_to_json(rep)
