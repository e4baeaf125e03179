"""Command-line surface: network/trip generation, training, evaluation,
method comparison, and the scalability smoke test.

Exit codes: 0 success, 2 configuration error, 3 missing or mismatched artifact.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import bench
from .baselines import BASELINE_ACTORS
from .config import Config, ConfigError, load_config
from .netmodel import (
    NetworkGenConfig,
    NetworkGenError,
    fresh_trip_process,
    generate_network,
    generate_trips,
    load_network,
    load_trips,
    save_network,
    save_trips,
)
from .reports import export_report, plot_cumulative_difference, read_val_curve
from .trainer import TRAINED_METHODS, assign_constraints


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a single config key (repeatable)",
    )
    p.add_argument("--seed", type=int, default=0, help="base seed")


def _config_from(args) -> Config:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    return load_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="greenwave",
        description="Traffic-signal control lab: simulation, learned planning, baselines.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-net", help="generate random road networks")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--min-intersections", type=int, default=2)
    g.add_argument("--max-intersections", type=int, default=3)
    g.add_argument("--grid", type=int, help="generate a square grid of this side instead")
    g.add_argument(
        "--constraints",
        choices=("none", "cyclic", "acyclic", "hybrid"),
        default="none",
        help="constraint regime to assign to the generated networks",
    )

    t = sub.add_parser("gen-trips", help="sample a trip set for a network")
    t.add_argument("--net", required=True)
    t.add_argument("--minutes", type=int, default=10)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--out", required=True, help="output trips JSON file")

    tr = sub.add_parser("train", help="train one method")
    tr.add_argument("--method", required=True, choices=TRAINED_METHODS)
    tr.add_argument("--out", required=True, help="artifact root directory")
    tr.add_argument(
        "--seed-index",
        type=int,
        help="train only this repetition (default: all)",
    )
    tr.add_argument("--verbose", action="store_true")
    _add_config_args(tr)

    ev = sub.add_parser("eval", help="run one method over saved networks and trips")
    ev.add_argument("--method", required=True, choices=bench.ALL_METHODS)
    ev.add_argument("--ckpt", help="checkpoint file (learned methods)")
    ev.add_argument("--nets", nargs="+", required=True)
    ev.add_argument("--trips", nargs="+", required=True)
    ev.add_argument("--out", required=True)
    _add_config_args(ev)

    cp = sub.add_parser("compare", help="paired comparison on freshly drawn test sets")
    cp.add_argument("--methods", required=True, help="comma-separated method ids")
    cp.add_argument("--ref", help="reference method for paired differences")
    cp.add_argument("--ckpt-root", required=True, help="artifact root holding train/<method>/seed<k>/best.bin")
    cp.add_argument("--regime", choices=("cyclic", "acyclic", "hybrid"), default="cyclic")
    cp.add_argument("--out", required=True)
    cp.add_argument("--verbose", action="store_true")
    _add_config_args(cp)

    sm = sub.add_parser("smoke", help="large-grid scalability check, null search budget")
    sm.add_argument("--ckpt", required=True)
    sm.add_argument("--out", required=True)
    sm.add_argument("--verbose", action="store_true")
    _add_config_args(sm)

    return p


def cmd_gen_net(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        seed = bench.derive_seed(args.seed, "gen-net", i)
        if args.grid:
            gcfg = NetworkGenConfig(
                intersection_range=(args.grid**2, args.grid**2),
                seed=seed,
                grid_shape=(args.grid, args.grid),
            )
        else:
            gcfg = NetworkGenConfig(
                intersection_range=(args.min_intersections, args.max_intersections),
                seed=seed,
            )
        net = generate_network(gcfg)
        if args.constraints != "none":
            net = assign_constraints(
                net, args.constraints, bench.stream(args.seed, "gen-net-constraints", i)
            )
        path = os.path.join(args.out, f"net_{i:02d}.json")
        save_network(net, path)
        print(path)
    return 0


def cmd_gen_trips(args) -> int:
    net = load_network(args.net)
    rng = bench.stream(args.seed, "gen-trips")
    tp = fresh_trip_process(net, rng)
    trips = generate_trips(net, tp, args.minutes * 60, rng)
    save_trips(trips, args.out)
    print(f"{args.out}: {len(trips)} trips over {args.minutes} min")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    hp = cfg.hyperparams()
    ecfg = bench.ExperimentConfig.from_config(cfg)
    pools = bench.build_pools(args.seed, ecfg, hp.episode_steps)
    os.makedirs(args.out, exist_ok=True)
    bench.save_pools(pools, args.out)
    seed_indices = (
        [args.seed_index] if args.seed_index is not None else list(range(ecfg.seeds))
    )
    for k in seed_indices:
        res = bench.train_cell(
            args.method, k, args.seed, pools, hp, out_root=args.out,
            quiet=not args.verbose,
        )
        final_val = res.val_history[-1][1] if res.val_history else float("nan")
        print(
            f"{args.method} seed {k}: {len(res.log)} steps, "
            f"last validation reward {final_val:.1f}, "
            f"early stop {res.stopped_early}"
        )
    return 0


def cmd_eval(args) -> int:
    if len(args.nets) != len(args.trips):
        raise ConfigError("--nets and --trips must pair up one-to-one")
    cfg = _config_from(args)
    hp = cfg.hyperparams()
    ecfg = bench.ExperimentConfig.from_config(cfg)
    params = None
    if args.method not in BASELINE_ACTORS:
        if not args.ckpt:
            raise bench.MissingArtifact(f"--ckpt required for {args.method}")
        params = bench.load_checkpoint(args.ckpt)
    os.makedirs(args.out, exist_ok=True)
    totals_path = os.path.join(args.out, "totals.csv")
    per_trip_path = os.path.join(args.out, "per_trip.csv")
    with open(totals_path, "w", newline="") as f_tot, open(
        per_trip_path, "w", newline=""
    ) as f_trip:
        w_tot = csv.writer(f_tot)
        w_tot.writerow(["net", "trips", "total_delay", "steps", "finished", "trip_hash"])
        w_trip = csv.writer(f_trip)
        w_trip.writerow(["net", "trip", "delay"])
        for i, (net_path, trip_path) in enumerate(zip(args.nets, args.trips)):
            if not os.path.exists(net_path):
                raise bench.MissingArtifact(f"network not found: {net_path}")
            if not os.path.exists(trip_path):
                raise bench.MissingArtifact(f"trips not found: {trip_path}")
            net = load_network(net_path)
            trips = load_trips(trip_path)
            actor = bench.make_actor(
                args.method, hp, bench.stream(args.seed, "cli-eval", i), params
            )
            ep = bench.run_eval_episode(
                net, trips, actor, ecfg.eval_max_steps, args.method
            )
            w_tot.writerow(
                [
                    os.path.basename(net_path),
                    os.path.basename(trip_path),
                    f"{ep.total_delay:.3f}",
                    ep.steps,
                    int(ep.finished),
                    bench.trip_hash(trips),
                ]
            )
            for trip_index in sorted(ep.per_trip):
                w_trip.writerow(
                    [os.path.basename(net_path), trip_index, f"{ep.per_trip[trip_index]:.3f}"]
                )
            print(
                f"{args.method} on {os.path.basename(net_path)}: "
                f"total delay {ep.total_delay:.0f} in {ep.steps} steps"
            )
    return 0


def cmd_compare(args) -> int:
    cfg = _config_from(args)
    hp = cfg.hyperparams()
    ecfg = bench.ExperimentConfig.from_config(cfg)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in bench.ALL_METHODS:
            raise ConfigError(f"unknown method: {m}")
    pools = bench.build_pools(args.seed, ecfg, hp.episode_steps)
    test_nets = bench.constrained_test_nets(pools.test, args.regime, args.seed)
    params_by_method = {}
    for m in methods:
        if m in bench.BASELINE_METHODS:
            continue
        params_by_method[m] = [
            bench.load_checkpoint(bench.checkpoint_path(args.ckpt_root, m, k))
            for k in range(ecfg.seeds)
        ]
    report = bench.run_experiment1(
        test_nets,
        methods,
        params_by_method,
        hp,
        ecfg,
        args.seed,
        reference=args.ref,
        quiet=not args.verbose,
    )
    curves = {}
    for m in methods:
        if m in bench.BASELINE_METHODS:
            continue
        method_curves = []
        for k in range(ecfg.seeds):
            log_path = os.path.join(
                args.ckpt_root, "train", m, f"seed{k}", "training_log.csv"
            )
            if os.path.exists(log_path):
                method_curves.append(read_val_curve(log_path))
        if method_curves:
            curves[m] = method_curves
    export_report(report, args.out, training_curves=curves or None)
    for m in methods:
        print(f"{m}: mean total delay {bench.mean_total_delay(report, m):.1f}")
    print(f"report written to {args.out}")
    return 0


def cmd_smoke(args) -> int:
    cfg = _config_from(args)
    hp = cfg.hyperparams()
    ecfg = bench.ExperimentConfig.from_config(cfg)
    params = bench.load_checkpoint(args.ckpt)
    rep = bench.run_smoke_scale(params, hp, ecfg, args.seed, quiet=not args.verbose)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "smoke.json"), "w") as f:
        f.write(bench.smoke_report_to_json(rep))
    with open(os.path.join(args.out, "cum_diff.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "cum_diff"])
        for i, v in enumerate(rep.cum_diff):
            w.writerow([i + 1, f"{v:.4f}"])
    plot_cumulative_difference(rep, os.path.join(args.out, "cum_diff.svg"))
    print(
        f"{rep.n_intersections} intersections: mean step latency "
        f"{rep.mean_latency_s * 1e3:.1f} ms, cumulative delay difference "
        f"{rep.final_diff:.0f}"
    )
    return 0


_COMMANDS = {
    "gen-net": cmd_gen_net,
    "gen-trips": cmd_gen_trips,
    "train": cmd_train,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "smoke": cmd_smoke,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except NetworkGenError as e:
        print(f"generation failed: {e}", file=sys.stderr)
        return 2
    except (bench.MissingArtifact, bench.PairingError) as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
