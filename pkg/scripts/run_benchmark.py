#!/usr/bin/env python3
"""Build the synthetic benchmark, run every policy and print throughput by tier.

    python3 scripts/run_benchmark.py --out runs/bench --seed 1 --lockers 30
"""
from __future__ import annotations

import argparse
import json
import statistics
import time
from collections import defaultdict
from pathlib import Path

from lockeryield.bench import BenchSpec, build_world, write_world
from lockeryield.pipeline import PipelineConfig, dataset_from_world, run_pipeline, write_reports


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/bench")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--lockers", type=int, default=30)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.out)
    world = build_world(BenchSpec(n_lockers=args.lockers, seed=args.seed))
    write_world(world, out / "data")
    ds = dataset_from_world(world)
    cfg = PipelineConfig(data_dir=out / "data", out_dir=out / "run", workers=args.workers)
    t0 = time.perf_counter()
    result = run_pipeline(ds, cfg)
    elapsed = time.perf_counter() - t0
    write_reports(ds, result, cfg, cfg.out_dir)

    by_tier: dict[str, dict[str, list[int]]] = defaultdict(lambda: defaultdict(list))
    for lid, comp in result.comparisons.items():
        for name, rep in comp.reports.items():
            by_tier[ds.tiers[lid]][name].append(rep.throughput)
    print(f"{'tier':8s} {'lockers':>7s} " + " ".join(f"{p:>15s}" for p in cfg.policies))
    for tier in ("low", "medium", "high"):
        if tier not in by_tier:
            continue
        cols = by_tier[tier]
        n = len(next(iter(cols.values())))
        print(f"{tier:8s} {n:7d} " + " ".join(f"{sum(cols[p]):15d}" for p in cfg.policies))
    for base in ("ProportionRule", "FCFS"):
        ups = [c.uplift("Reservation", base) for c in result.comparisons.values()]
        print(f"Reservation vs {base}: mean uplift {statistics.mean(ups):+.2f}%  max {max(ups):+.2f}%")
    print(json.dumps(result.metrics, sort_keys=True))
    print(f"pipeline {elapsed:.1f}s; reports in {cfg.out_dir}")


if __name__ == "__main__":
    main()
