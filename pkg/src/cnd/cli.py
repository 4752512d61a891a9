"""Command-line entry point: ``cnd run`` and ``cnd validate``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, ScenarioConfig, load, validate
from .metrics import TrialMetrics, summarize, total_energy
from .protocol import Policy
from .simulator import run_trial

SUMMARY_COLUMNS = ["policy", "trials", "mean_energy_per_link", "empirical_detection_fraction",
                   "ci_halfwidth", "mean_latency_s"]
PER_TRIAL_COLUMNS = ["trial", "seed", "detected_within_T", "latency_s", "total_energy",
                     "hello_count", "sync_count"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf"
        return f"{x:.6f}"
    return str(x)


def run_one(cfg: ScenarioConfig, policy: Policy, seed: int, trace: bool = False) -> tuple[TrialMetrics, list]:
    params = cfg.params.with_policy(policy)
    metrics, sim = run_trial(cfg.graph(seed), params, cfg.events, cfg.horizon, seed,
                             segments=cfg.segments, settings=cfg.settings, targets=cfg.targets,
                             trace=trace, region=cfg.region)
    return metrics, sim.trace


def _job(args):
    cfg, policy, seed, trace = args
    return run_one(cfg, policy, seed, trace)


def run_batch(cfg: ScenarioConfig, out: Path, trace: bool = False, jobs: int = 1) -> dict[str, list[TrialMetrics]]:
    """Run every policy over trials ``base_seed + i`` and write the CSVs."""
    out.mkdir(parents=True, exist_ok=True)
    seeds = [cfg.base_seed + i for i in range(cfg.trials)]
    results: dict[str, list[TrialMetrics]] = {}
    for k, policy in enumerate(cfg.policies):
        want_trace = trace and k == 0
        tasks = [(cfg, policy, s, want_trace) for s in seeds]
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                done = list(pool.map(_job, tasks))
        else:
            done = [_job(t) for t in tasks]
        results[policy.value] = [m for m, _ in done]
        if want_trace:
            for i, (_, tr) in enumerate(done):
                with open(out / f"trace_{i}.jsonl", "w") as fh:
                    for rec in tr:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
        name = "per_trial.csv" if k == 0 else f"per_trial_{policy.value}.csv"
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PER_TRIAL_COLUMNS)
            for i, (s, m) in enumerate(zip(seeds, results[policy.value])):
                w.writerow([i, s, _fmt(m.detected_within), _fmt(m.latency),
                            _fmt(total_energy(m, cfg.energy)), m.count("hello"), m.count("sync")])
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for policy, trials in results.items():
            row = summarize(policy, trials, cfg.energy)
            w.writerow([_fmt(getattr(row, c)) for c in SUMMARY_COLUMNS])
    return results


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = argparse.ArgumentParser(prog="cnd", description="Continuous neighbour discovery simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario batch")
    r.add_argument("config")
    r.add_argument("--out", required=True)
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--trace", action="store_true")
    r.add_argument("--jobs", type=int, default=1)
    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("config")
    args = ap.parse_args(argv)

    if args.command == "validate":
        diags = validate(args.config)
        for d in diags:
            print(f"{args.config}: {d}", file=sys.stderr)
        return 2 if diags else 0

    try:
        cfg, _ = load(args.config)
    except ConfigError as e:
        for d in e.diagnostics:
            print(f"{args.config}: {d}", file=sys.stderr)
        return 2
    if "CND_SEED" in os.environ:
        try:
            cfg = replace(cfg, base_seed=int(os.environ["CND_SEED"]))
        except ValueError:
            print(f"CND_SEED: expected an integer, got {os.environ['CND_SEED']!r}", file=sys.stderr)
            return 2
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed)
    if args.trials is not None:
        if args.trials < 1:
            print("--trials: must be at least 1", file=sys.stderr)
            return 2
        cfg = replace(cfg, trials=args.trials)
    try:
        run_batch(cfg, Path(args.out), trace=args.trace, jobs=args.jobs)
    except Exception as e:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"run failed: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
