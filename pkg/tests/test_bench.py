import json

import numpy as np
import pytest

from lockeryield.bench import BenchSpec, build_world, demand_by_day, write_world
from lockeryield.core import ConfigError, EventKind, check_sorted
from lockeryield.pipeline import load_dataset
from lockeryield.workload import SyntheticWorkloadSpec, generate_workload, observed_log

UNIFORM = [[1 / 7] * 7] * 2
SAME_DAY_LEAD = [[1.0], [1.0]]


def spec(**kw):
    base = dict(rates=[3.0, 2.0], dwell_pmfs=UNIFORM, lead_pmfs=[[0.5, 0.5], [0.2, 0.8]], n_days=10, lockers=2)
    base.update(kw)
    return SyntheticWorkloadSpec(**base)


def test_zero_rates_give_empty_stream():
    assert generate_workload(spec(rates=[0.0, 0.0])) == []
    assert generate_workload(spec(lockers=0)) == []


def test_workload_is_deterministic_and_well_formed():
    a, b = generate_workload(spec(rng_seed=3)), generate_workload(spec(rng_seed=3))
    assert a == b and a != generate_workload(spec(rng_seed=4))
    check_sorted(a)
    kinds = {}
    for e in a:
        kinds.setdefault(e.order_id, []).append(e)
    for evs in kinds.values():
        req, dlv, end = evs
        assert req.kind is EventKind.Request and dlv.kind is EventKind.Delivery
        assert 0 <= dlv.day - req.day <= 1
        assert (end.kind is EventKind.Return) == (end.day - dlv.day >= 3)


def test_same_day_dwell_means_pickup_on_delivery_day():
    pmf = [[1, 0, 0, 0, 0, 0, 0]] * 2
    evs = generate_workload(spec(dwell_pmfs=pmf, lead_pmfs=SAME_DAY_LEAD))
    ends = [e for e in evs if e.kind in (EventKind.Pickup, EventKind.Return)]
    dlv = {e.order_id: e for e in evs if e.kind is EventKind.Delivery}
    assert ends and all(e.kind is EventKind.Pickup and e.day == dlv[e.order_id].day for e in ends)
    assert all(e.within_day_seq > dlv[e.order_id].within_day_seq for e in ends)


@pytest.mark.parametrize("bad", [dict(rates=[-1.0, 1.0]), dict(dwell_pmfs=[[1.0]]), dict(lead_pmfs=[[0.5], [1.0]]),
                                 dict(weekly=(1.0,))])
def test_workload_validation(bad):
    with pytest.raises(ConfigError):
        generate_workload(spec(**bad))


def test_observed_log_keeps_rejected_requests():
    evs = generate_workload(spec())
    oid = evs[0].order_id
    log = observed_log(evs, {oid})
    assert [e.kind for e in log if e.order_id == oid] == [EventKind.Request]


def test_bench_world_and_files(tmp_path):
    s = BenchSpec(n_lockers=3, seed=5)
    world = build_world(s)
    assert [b.tier for b in world.lockers] == ["low", "medium", "high"]
    manifest = write_world(world, tmp_path)
    assert json.loads((tmp_path / "manifest.json").read_text()) == json.loads(json.dumps(manifest))
    ds = load_dataset(tmp_path)
    assert ds.tiers == {"L000": "low", "L001": "medium", "L002": "high"}
    for b in world.lockers:
        lid = b.row.locker_id
        assert ds.trace[lid] == world.trace[lid] and ds.history[lid] == world.production[lid]
    again = build_world(BenchSpec(n_lockers=3, seed=5))
    assert again.trace == world.trace


def test_bench_load_matches_tier():
    world = build_world(BenchSpec(n_lockers=3, seed=2))
    lo, hi = world.spec.window
    for b in world.lockers:
        d = demand_by_day(world.trace[b.row.locker_id], 4, lo, hi)
        assert d.sum() > 0
    high = world.lockers[2]
    assert high.rates.sum() > world.lockers[0].rates.sum() * high.row.capacity / world.lockers[0].row.capacity


def test_bench_spec_validation():
    with pytest.raises(ConfigError):
        BenchSpec.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        build_world(BenchSpec(history_start=-10))
    spec = BenchSpec(n_lockers=2)
    assert BenchSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec
    assert build_world(BenchSpec(n_lockers=0)).lockers == []
    assert np.isclose(np.asarray(spec.dwell_pmfs).sum(axis=1), 1).all()
