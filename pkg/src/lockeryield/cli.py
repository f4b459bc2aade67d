"""Command-line entry point: ``lockeryield {ingest,bench,train,plan,simulate,report}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .core import ConfigError, InvalidEventError, LockerError, OrderingError
from .formats import DataError, ingest_events, read_options, write_events
from .simplex import SolverError
from .simulate import ReplayError

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER, EXIT_REPLAY = 0, 1, 2, 3, 4, 5

log = logging.getLogger("lockeryield")


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ReplayError):
        return EXIT_REPLAY
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    if isinstance(exc, (DataError, InvalidEventError, OrderingError)):
        return EXIT_DATA
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    return EXIT_ERROR


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {p} not found")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{p}: top level must be an object")
    return doc


def pipeline_config(args, **extra):
    """Flags first, then the config file on top."""
    from .pipeline import PipelineConfig
    from .trees import ForestParams

    flags = {"data_dir": args.data, "out_dir": args.out, "horizon": args.horizon, "workers": args.workers}
    if getattr(args, "seed", None) is not None:
        flags["forecast_seed"] = args.seed
        flags["dwell_seed"] = args.seed + 1000
    if getattr(args, "lockers", None):
        flags["lockers"] = tuple(args.lockers)
    if getattr(args, "policy", None):
        flags["policies"] = tuple(args.policy)
    if getattr(args, "cadence", None):
        flags["cadence"] = args.cadence
    if getattr(args, "safety_margin", None) is not None:
        flags["safety_margin"] = args.safety_margin
    if getattr(args, "trees", None):
        flags["forest"] = ForestParams(n_trees=args.trees)
    flags.update(extra)
    flags.update(load_config_file(args.config))
    return PipelineConfig.from_dict(flags)


def _dataset(cfg):
    from .pipeline import load_dataset

    return load_dataset(cfg.data_dir, cfg.lockers)


# --- subcommands ---------------------------------------------------------------

def cmd_ingest(args) -> int:
    options = read_options(args.options) if args.options else None
    events, diags, total = [], [], 0
    for path in args.files:
        res = ingest_events(path, n_options=len(options) if options else None, skip_bad=True)
        events.extend(res.events)
        diags.extend(res.diagnostics)
        total += res.n_lines
    for d in diags:
        print(d, file=sys.stderr)
    if diags and not args.skip_bad:
        print(f"{len(diags)} invalid record(s); nothing written (use --skip-bad to drop them)", file=sys.stderr)
        return EXIT_DATA
    from .core import sort_events

    n = write_events(args.out, sort_events(events))
    print(f"ingested {n} of {total} records into {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import BenchSpec, build_world, write_world

    settings = {"seed": args.seed if args.seed is not None else 1}
    if args.lockers is not None:
        settings["n_lockers"] = args.lockers
    settings.update(load_config_file(args.config))
    spec = BenchSpec.from_dict(settings)
    manifest = write_world(build_world(spec), Path(args.out))
    print(f"wrote {len(manifest['lockers'])} lockers to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .pipeline import save_models, train_models

    cfg = pipeline_config(args)
    ds = _dataset(cfg)
    models = train_models(ds, cfg)
    save_models(models, cfg.out_dir / "models")
    print(f"trained models in {models.train_seconds:.1f}s -> {cfg.out_dir / 'models'}")
    return EXIT_OK


def _models(cfg, models_dir):
    from .pipeline import load_models, save_models, train_models

    if models_dir:
        return load_models(Path(models_dir))
    if (cfg.out_dir / "models" / "dwell.json").exists():
        return load_models(cfg.out_dir / "models")
    models = train_models(_dataset(cfg), cfg)
    save_models(models, cfg.out_dir / "models")
    return models


def cmd_plan(args) -> int:
    from .pipeline import build_histories, plan_inputs, stage_metrics, write_plans

    cfg = pipeline_config(args, run_date=args.plan_day, window=(args.plan_day + 1, args.plan_day + args.horizon))
    ds = _dataset(cfg)
    models = _models(cfg, args.models)
    histories = build_histories(ds)
    inputs = plan_inputs(ds, models, histories, cfg, [cfg.run_date])
    metrics = {}
    try:
        objectives = write_plans(ds, inputs, cfg, cfg.run_date, cfg.out_dir / "plans")
    finally:
        metrics = stage_metrics(ds, inputs, histories, models, cfg, cfg.run_date)
        (cfg.out_dir / "plan_metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(objectives)} plan files to {cfg.out_dir / 'plans'}")
    print(json.dumps(metrics, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .optimize import read_plan
    from .pipeline import (
        Dataset,
        RunResult,
        build_histories,
        plan_inputs,
        simulate_all,
        stage_metrics,
        write_reports,
    )

    cfg = pipeline_config(args)
    ds = _dataset(cfg)
    models = _models(cfg, args.models)
    histories = build_histories(ds)
    inputs = plan_inputs(ds, models, histories, cfg, list(range(cfg.run_date, cfg.window[1])))
    if args.plans and "Reservation" in cfg.policies:
        # fixed limits from plan files instead of re-solving inside the replay
        keep = []
        for lid in ds.locker_ids:
            path = Path(args.plans) / f"{lid}.csv"
            if not path.exists():
                log.warning("no plan for locker %s; skipped", lid)
                continue
            inputs[lid].static_limits = read_plan(path).limits
            keep.append(lid)
        ds = Dataset([ds.row(l) for l in keep], ds.options, ds.home, ds.history, ds.trace, ds.tiers)
    comparisons = simulate_all(ds, inputs, cfg)
    result = RunResult(comparisons, stage_metrics(ds, inputs, histories, models, cfg, cfg.run_date), {}, inputs, models)
    write_reports(ds, result, cfg, cfg.out_dir)
    print(f"simulated {len(comparisons)} lockers x {len(cfg.policies)} policies -> {cfg.out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    run = Path(args.run)
    spath = run / "summary.json"
    if not spath.exists():
        raise DataError(f"{spath} not found; run simulate first")
    summary = json.loads(spath.read_text())
    tiers = {}
    if args.data and (Path(args.data) / "manifest.json").exists():
        tiers = {e["locker_id"]: e["tier"] for e in json.loads((Path(args.data) / "manifest.json").read_text())["lockers"]}
    policy, base = args.policy, args.baseline
    rows = []
    for lid, reps in summary.items():
        if policy not in reps or base not in reps:
            continue
        a, b = reps[policy]["throughput"], reps[base]["throughput"]
        uplift = 0.0 if a == b else (100.0 * (a - b) / b if b else float("inf"))
        rows.append((lid, tiers.get(lid, ""), a, b, uplift))
    rows.sort(key=lambda r: (-r[4], r[0]))
    out = Path(args.out) if args.out else run / f"figure_uplift_{policy}_vs_{base}.csv"
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank", "locker_id", "tier", f"throughput_{policy}", f"throughput_{base}", "uplift_pct"])
        for i, (lid, tier, a, b, u) in enumerate(rows, start=1):
            w.writerow([i, lid, tier, a, b, f"{u:.6f}"])
    finite = [r[4] for r in rows if r[4] != float("inf")]
    mean = sum(finite) / len(finite) if finite else 0.0
    print(f"{len(rows)} lockers; mean uplift {mean:.2f}% ; max {max(finite, default=0.0):.2f}% ; "
          f"zero-uplift lockers {sum(1 for r in rows if r[4] == 0)} -> {out}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lockeryield", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="validate and sort raw event files")
    ing.add_argument("files", nargs="+")
    ing.add_argument("--out", required=True)
    ing.add_argument("--options", help="ship option table (id,label,speed_rank)")
    ing.add_argument("--skip-bad", action="store_true", help="drop invalid records instead of aborting")
    ing.set_defaults(func=cmd_ingest)

    b = sub.add_parser("bench", help="generate the synthetic multi-locker benchmark")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int)
    b.add_argument("--lockers", type=int)
    b.add_argument("--config", help="JSON benchmark settings; override flags")
    b.set_defaults(func=cmd_bench)

    def common(sp):
        sp.add_argument("--data", default="bench", help="benchmark or data directory")
        sp.add_argument("--out", default="out")
        sp.add_argument("--config", help="JSON pipeline config; overrides flags")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--horizon", type=int, default=7)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--locker", dest="lockers", action="append", help="restrict to a locker (repeatable)")
        sp.add_argument("--trees", type=int, help="trees per demand forest")

    t = sub.add_parser("train", help="train demand forests and dwell classifiers")
    common(t)
    t.set_defaults(func=cmd_train)

    pl = sub.add_parser("plan", help="forecast, estimate dwell and solve the reservation LP per locker")
    common(pl)
    pl.add_argument("--models", help="directory with trained models (default: OUT/models, trained if absent)")
    pl.add_argument("--plan-day", type=int, default=0)
    pl.set_defaults(func=cmd_plan)

    sm = sub.add_parser("simulate", help="replay admission policies and write comparison reports")
    common(sm)
    sm.add_argument("--models")
    sm.add_argument("--policy", action="append", choices=["FCFS", "ProportionRule", "Reservation"])
    sm.add_argument("--cadence", choices=["daily", "weekly"])
    sm.add_argument("--safety-margin", type=float)
    sm.add_argument("--plans", help="use fixed limits from these plan files instead of re-solving")
    sm.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="uplift table for plotting")
    r.add_argument("--run", default="out")
    r.add_argument("--data", help="benchmark directory, for tier labels")
    r.add_argument("--policy", default="Reservation")
    r.add_argument("--baseline", default="ProportionRule")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for d in exc.diagnostics:
            print(f"  {d}", file=sys.stderr)
        return EXIT_DATA
    except LockerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code(exc)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
