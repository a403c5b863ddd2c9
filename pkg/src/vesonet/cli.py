"""Command-line entry point.

Subcommands: validate, gen-scenario, gen-log, run, sweep, train-rl,
train-embed, audit. Exit codes: 0 success, 1 validation failure, 2 runtime
failure, 3 audit mismatch. Set VESONET_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import List, Optional, Sequence

from . import audit as audit_mod
from . import sim_engine, synth
from .content_embed import (
    EmbedParams,
    build_content_graph,
    load_consumption_csv,
    train_embeddings,
    write_consumption_csv,
)
from .sim_engine import POLICIES, Scenario

log = logging.getLogger("vesonet")

POLICY_ALIASES = {"vesonet": "vesonet", "baseline": "baseline_no_reroute",
                  "baseline_no_reroute": "baseline_no_reroute"}


def _setup_logging() -> None:
    level = os.environ.get("VESONET_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_scenario(args) -> Scenario:
    scenario = Scenario.load(args.config)
    if getattr(args, "seed", None) is not None:
        scenario = replace(scenario, rng_seed=args.seed)
    if getattr(args, "policy", None) is not None:
        scenario = replace(scenario, policy=POLICY_ALIASES[args.policy])
    return scenario


def cmd_validate(args) -> int:
    try:
        scenario = Scenario.load(args.config)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"parse error: {exc}")
        return 1
    errors = scenario.validate()
    if errors:
        for error in errors:
            print(f"invalid: {error}")
        return 1
    print("ok")
    return 0


def cmd_gen_scenario(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    grid_text = synth.make_grid_text(args.grid, args.block_m, args.speed, args.jitter, args.seed)
    network_path = os.path.join(args.out, "grid.edges")
    with open(network_path, "w") as handle:
        handle.write(grid_text)
    events, clusters = synth.generate_consumption_log(
        args.users, args.items, args.clusters, args.seed)
    log_path = os.path.join(args.out, "consumption.csv")
    write_consumption_csv(log_path, events)
    synth.write_clusters_csv(os.path.join(args.out, "clusters.csv"), clusters)
    total = args.vehicles
    providers = max(1, int(round(total * 0.2)))
    metadata = max(1, int(round(total * 0.08)))
    consumers = max(0, total - providers - metadata)
    scenario = Scenario(
        network_file="grid.edges",
        consumption_log="consumption.csv",
        consumers=consumers,
        providers=providers,
        metadata=metadata,
        rsu_count=args.rsus,
        epsilon_s=args.epsilon,
        alpha=args.alpha,
        run_ticks=args.ticks,
        rng_seed=args.seed,
        policy=POLICY_ALIASES[args.policy],
    )
    scenario_path = os.path.join(args.out, "scenario.json")
    with open(scenario_path, "w") as handle:
        handle.write(scenario.to_json() + "\n")
    print(f"wrote {network_path}, {log_path}, {scenario_path}")
    return 0


def cmd_gen_log(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    events, clusters = synth.generate_consumption_log(
        args.users, args.items, args.clusters, args.seed,
        args.mean_history, args.inter_prob)
    log_path = os.path.join(args.out, "consumption.csv")
    write_consumption_csv(log_path, events)
    synth.write_clusters_csv(os.path.join(args.out, "clusters.csv"), clusters)
    print(f"wrote {log_path} ({len(events)} events)")
    return 0


def cmd_run(args) -> int:
    scenario = _load_scenario(args)
    errors = scenario.validate()
    if errors:
        for error in errors:
            print(f"invalid: {error}")
        return 1
    os.makedirs(args.out, exist_ok=True)
    report, events = sim_engine.run(scenario)
    sim_engine.write_events_csv(events, os.path.join(args.out, "events.csv"))
    sim_engine.write_metrics_csv(report, os.path.join(args.out, "metrics.csv"))
    for line in sim_engine.metrics_lines(report):
        print(line)
    return 0


def _sweep_one(payload) -> dict:
    scenario_dict, axis, value, policy, seed = payload
    scenario = Scenario.from_dict(scenario_dict)
    scenario = replace(scenario, policy=policy, rng_seed=seed)
    scenario = sim_engine.apply_axis(scenario, axis, value)
    report, _ = sim_engine.run(scenario)
    return {
        "axis": axis, "value": value, "policy": policy, "seed": seed,
        "requested": report.requested, "delivered": report.delivered,
        "failed": report.failed, "trips_completed": report.trips_completed,
        "mean_delivery_delay_s": report.mean_delivery_delay_s,
        "delivery_rate": report.delivery_rate,
        "mean_travel_time_s": report.mean_travel_time_s,
        "computation_cost": report.computation_cost,
    }


def cmd_sweep(args) -> int:
    scenario = _load_scenario(args)
    errors = scenario.validate()
    if errors:
        for error in errors:
            print(f"invalid: {error}")
        return 1
    values = [float(v) for v in args.values.split(",")]
    if len(values) < 2:
        print("invalid: --values needs at least 2 comma-separated numbers")
        return 1
    seeds = list(range(args.seeds)) if args.seed is None else [args.seed + i for i in range(args.seeds)]
    policies = [POLICY_ALIASES[args.policy]] if args.policy else list(POLICIES)
    os.makedirs(args.out, exist_ok=True)
    raw = dataclasses.asdict(scenario)
    raw["dqn"]["hidden"] = tuple(raw["dqn"]["hidden"])
    scenario_dict = json.loads(scenario.to_json())
    jobs = []
    for value in values:
        for policy in policies:
            for seed in seeds:
                jobs.append((scenario_dict, args.axis, value, policy, seed))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(job) for job in jobs]
    out_path = os.path.join(args.out, "sweep.csv")
    sim_engine.write_sweep_csv(rows, out_path)
    print(f"wrote {out_path} ({len(rows)} runs)")
    return 0


def cmd_train_rl(args) -> int:
    scenario = _load_scenario(args)
    scenario = replace(scenario, policy="vesonet", rl_training=True)
    errors = scenario.validate()
    if errors:
        for error in errors:
            print(f"invalid: {error}")
        return 1
    os.makedirs(args.out, exist_ok=True)
    world = sim_engine.World(scenario)
    for tick in range(scenario.run_ticks):
        world.step(tick)
    if world.agent is None:
        print("no agent was trained")
        return 2
    checkpoint = os.path.join(args.out, "policy.npz")
    world.agent.save(checkpoint)
    curve = os.path.join(args.out, "rl_curve.csv")
    world.agent.write_curve_csv(curve)
    print(f"wrote {checkpoint} and {curve} ({world.agent.train_steps} training steps)")
    return 0


def cmd_train_embed(args) -> int:
    events = load_consumption_csv(args.log)
    graph = build_content_graph(events, args.min_cooccurrence)
    params = EmbedParams(dimension=args.dim, epochs=args.epochs, rng_seed=args.seed)
    model = train_embeddings(graph, params)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "embeddings.csv")
    model.export_csv(out_path)
    history = ", ".join(f"{x:.4f}" for x in model.objective_history)
    print(f"wrote {out_path} ({graph.n_nodes} items, d={args.dim}); epoch NLL: {history}")
    return 0


def cmd_audit(args) -> int:
    result = audit_mod.audit_events(args.events, max_hops=args.max_hops)
    for error in result.row_errors:
        print(f"malformed: {error}")
    for name, passed, detail in result.verdicts:
        status = "pass" if passed else "FAIL"
        print(f"invariant {name}: {status}" + (f" ({detail})" if detail and not passed else ""))
    print(f"requested={result.requested} delivered={result.delivered} failed={result.failed}")
    print(f"mean_delivery_delay_s={result.mean_delivery_delay_s!r}")
    print(f"delivery_rate={result.delivery_rate!r}")
    print(f"mean_travel_time_s={result.mean_travel_time_s!r}")
    print(f"computation_cost={result.computation_cost}")
    failed = bool(result.row_errors) or not result.ok
    if args.metrics:
        mismatches = audit_mod.compare_with_metrics(result, audit_mod.read_metrics_csv(args.metrics))
        for mismatch in mismatches:
            print(f"mismatch: {mismatch}")
        if mismatches:
            return 3
    return 3 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vesonet",
        description="Social-aware vehicular content caching simulator and toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a scenario config")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("gen-scenario", help="generate a grid map, consumption log and scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, default=4)
    p.add_argument("--block-m", type=float, default=750.0)
    p.add_argument("--speed", type=float, default=20.0)
    p.add_argument("--jitter", type=float, default=0.15)
    p.add_argument("--vehicles", type=int, default=60)
    p.add_argument("--rsus", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=60.0)
    p.add_argument("--alpha", type=float, default=0.55)
    p.add_argument("--ticks", type=int, default=500)
    p.add_argument("--users", type=int, default=40)
    p.add_argument("--items", type=int, default=40)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", choices=sorted(POLICY_ALIASES), default="vesonet")
    p.set_defaults(fn=cmd_gen_scenario)

    p = sub.add_parser("gen-log", help="generate a planted-cluster consumption log")
    p.add_argument("--out", required=True)
    p.add_argument("--users", type=int, default=100)
    p.add_argument("--items", type=int, default=100)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--mean-history", type=int, default=12)
    p.add_argument("--inter-prob", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gen_log)

    p = sub.add_parser("run", help="run one scenario and write events + metrics CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", choices=sorted(POLICY_ALIASES))
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter sweep (one run per value/policy/seed)")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--axis", required=True, choices=sim_engine.SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--seeds", type=int, default=1, help="number of seeds per point")
    p.add_argument("--seed", type=int, help="seed base (default 0)")
    p.add_argument("--policy", choices=sorted(POLICY_ALIASES),
                   help="restrict to one policy (default: both)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("train-rl", help="train the provider navigation policy in simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train_rl)

    p = sub.add_parser("train-embed", help="train content embeddings from a consumption log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--min-cooccurrence", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_train_embed)

    p = sub.add_parser("audit", help="recompute metrics and invariants from an event log")
    p.add_argument("--events", required=True)
    p.add_argument("--metrics", help="runner metrics.csv to compare against")
    p.add_argument("--max-hops", type=int, default=15)
    p.set_defaults(fn=cmd_audit)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        log.error("failed: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
