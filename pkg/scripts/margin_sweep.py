#!/usr/bin/env python3
"""Throughput of the reservation policy as the admission safety margin grows.

Models are trained once and reused for every margin.
"""
from __future__ import annotations

import argparse
import dataclasses

from lockeryield.bench import BenchSpec, build_world
from lockeryield.pipeline import PipelineConfig, dataset_from_world, run_pipeline


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--lockers", type=int, default=12)
    ap.add_argument("--margins", type=float, nargs="+", default=[0.0, 0.02, 0.05, 0.1])
    args = ap.parse_args()

    ds = dataset_from_world(build_world(BenchSpec(n_lockers=args.lockers, seed=args.seed)))
    base = PipelineConfig(policies=("FCFS", "Reservation"))
    models = None
    print("margin  reservation  fcfs  door_failures")
    for m in args.margins:
        res = run_pipeline(ds, dataclasses.replace(base, safety_margin=m), models=models)
        models = res.models
        r = sum(c.reports["Reservation"].throughput for c in res.comparisons.values())
        f = sum(c.reports["FCFS"].throughput for c in res.comparisons.values())
        doors = sum(c.reports["Reservation"].door_failures for c in res.comparisons.values())
        print(f"{m:6.2f}  {r:11d}  {f:4d}  {doors:13d}")


if __name__ == "__main__":
    main()
