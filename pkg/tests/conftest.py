from __future__ import annotations

import time

import numpy as np
import pytest

from lockeryield.core import DEFAULT_OPTIONS, LockerConfig, PackageEvent, EventKind

# criterion number -> (passed, detail); filled by test_acceptance and printed at the end
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_config(capacity=10, n_options=4, locker_id="L", horizon=7) -> LockerConfig:
    return LockerConfig(locker_id, capacity, DEFAULT_OPTIONS[:n_options], horizon)


def ev(oid, kind, day, seq=0, option=1, locker="L"):
    return PackageEvent(locker, oid, EventKind(kind), option, day, seq)


def order(oid, option, req_day, deliv_day, end_day, *, end="Pickup", req_seq=0, deliv_seq=36_000, end_seq=50_000,
          locker="L"):
    """Request, Delivery and terminal events of one order."""
    return [ev(oid, "Request", req_day, req_seq, option, locker),
            ev(oid, "Delivery", deliv_day, deliv_seq, option, locker),
            ev(oid, end, end_day, end_seq, option, locker)]


@pytest.fixture(scope="session")
def bench_world():
    from lockeryield.bench import BenchSpec, build_world

    return build_world(BenchSpec())


@pytest.fixture(scope="session")
def bench_run(bench_world):
    """The default 30-locker benchmark through the full pipeline, timed."""
    from lockeryield.pipeline import PipelineConfig, dataset_from_world, run_pipeline

    ds = dataset_from_world(bench_world)
    cfg = PipelineConfig()
    t0 = time.perf_counter()
    result = run_pipeline(ds, cfg)
    elapsed = time.perf_counter() - t0
    return ds, cfg, result, elapsed


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
