import dataclasses

import numpy as np
import pytest

from conftest import ev, make_config, order
from lockeryield.core import N_DWELL, sort_events
from lockeryield.simulate import (
    AdmissionPolicy,
    Decision,
    DecisionRecord,
    Reason,
    ReplayError,
    compare_policies,
    lag_presence,
    pct_delta,
    read_trace,
    replay,
    write_trace,
)


def surv(n_options, dwell=0):
    pmf = np.zeros(N_DWELL)
    pmf[dwell] = 1
    return lag_presence([pmf] * n_options)


def decisions(report):
    return [(d.order_id, d.decision, d.reason) for d in report.decisions]


def test_capacity_one_two_requests():
    cfg = make_config(capacity=1, n_options=1)
    evs = sort_events(order("a", 1, 0, 1, 1) + order("b", 1, 0, 1, 1, req_seq=10))
    rep = replay(evs, AdmissionPolicy.fcfs(surv(1)), cfg)
    assert decisions(rep) == [("a", Decision.Accept, Reason.Accepted), ("b", Decision.Reject, Reason.CapacityFull)]
    assert rep.throughput == 1 and rep.max_occupancy == 1
    assert rep.decisions[1].hindsight_space_available is False


def standard_then_expedited():
    evs = []
    for i in range(4):
        evs += order(f"s{i}", 3, 0, 2, 4, req_seq=i)
    evs += order("x", 1, 1, 2, 2)
    return sort_events(evs)


def test_fcfs_lets_standard_fill_the_locker():
    cfg = make_config(capacity=4, n_options=3)
    rep = replay(standard_then_expedited(), AdmissionPolicy.fcfs(surv(3, dwell=2)), cfg)
    assert decisions(rep)[-1] == ("x", Decision.Reject, Reason.CapacityFull)
    assert rep.throughput == 4


def test_reservation_protects_expedited_space():
    cfg = make_config(capacity=4, n_options=3)
    pol = AdmissionPolicy.reservation(surv(3, dwell=2), limits={(1, 2): 1, (3, 2): 3})
    rep = replay(standard_then_expedited(), pol, cfg)
    assert decisions(rep)[3] == ("s3", Decision.Reject, Reason.LimitExhausted)
    assert decisions(rep)[-1] == ("x", Decision.Accept, Reason.Accepted)
    assert rep.throughput_by_option == (1, 0, 3)


def test_zero_limit_rejects():
    cfg = make_config(capacity=5, n_options=1)
    pol = AdmissionPolicy.reservation(surv(1), limits={(1, 1): 0})
    rep = replay(sort_events(order("a", 1, 0, 1, 1)), pol, cfg)
    assert decisions(rep) == [("a", Decision.Reject, Reason.LimitExhausted)]
    assert rep.unjustified_rejections == 1


def test_nested_limits_use_unprotected_space():
    cfg = make_config(capacity=5, n_options=2)
    evs = sort_events(order("a", 2, 0, 1, 1) + order("b", 2, 0, 1, 1, req_seq=5))
    flat = AdmissionPolicy.reservation(surv(2), limits={(1, 1): 2, (2, 1): 1})
    nested = AdmissionPolicy.reservation(surv(2), limits={(1, 1): 2, (2, 1): 1}, nested=True)
    assert replay(evs, flat, cfg).accepted == 1
    assert replay(evs, nested, cfg).accepted == 2
    tight = AdmissionPolicy.reservation(surv(2), limits={(1, 1): 4, (2, 1): 1}, nested=True)
    assert replay(evs, tight, cfg).accepted == 1      # 1 booked + 4 held for option 1 leaves nothing


def test_proportion_shares():
    cfg = make_config(capacity=100, n_options=2)
    evs = []
    for i in range(26):
        evs += order(f"o{i}", 2, 0, 1, 1, req_seq=i)
    rep = replay(sort_events(evs), AdmissionPolicy.proportion([75, 25], surv(2)), cfg)
    assert rep.accepted == 25
    assert decisions(rep)[-1] == ("o25", Decision.Reject, Reason.LimitExhausted)
    zero = replay(sort_events(order("a", 2, 0, 1, 1)), AdmissionPolicy.proportion([10, 0], surv(2)), cfg)
    assert zero.accepted == 0


def test_empty_stream():
    cfg = make_config()
    rep = replay([], AdmissionPolicy.fcfs(surv(4)), cfg)
    assert (rep.requests, rep.accepted, rep.throughput, rep.max_occupancy) == (0, 0, 0, 0)
    assert rep.throughput_by_option == (0, 0, 0, 0)


def test_self_agreement_and_determinism():
    cfg = make_config(capacity=3, n_options=2)
    evs = []
    for d in range(10):
        for i in range(3):
            evs += order(f"o{d}-{i}", 1 + i % 2, d, d + 1, d + 1 + i % 3, req_seq=i)
    evs = sort_events(evs)
    pol = AdmissionPolicy.fcfs(surv(2, dwell=1))
    a = replay(evs, pol, cfg)
    b = replay(evs, pol, cfg, reference=a.decisions)
    assert b.agreement == 1.0 and dataclasses.replace(b, agreement=None) == a


def test_door_failure_when_belief_is_too_optimistic():
    cfg = make_config(capacity=1, n_options=1)
    evs = sort_events(order("a", 1, 0, 1, 3) + order("b", 1, 1, 2, 2))
    rep = replay(evs, AdmissionPolicy.fcfs(surv(1)), cfg)
    assert rep.accepted == 2 and rep.throughput == 1
    assert rep.door_failures == 1 and rep.door_failed_orders == ("b",)
    assert rep.accepted == rep.throughput + rep.edge_accepted + rep.door_failures


def test_committed_and_edge_orders():
    cfg = make_config(capacity=2, n_options=1)
    evs = sort_events(order("old", 1, -1, 1, 1) + order("a", 1, 0, 1, 1) + order("b", 1, 0, 1, 1, req_seq=9)
                      + order("late", 1, 0, 5, 5, req_seq=20))
    rep = replay(evs, AdmissionPolicy.fcfs(surv(1)), cfg, window=(0, 3), committed={"old"})
    assert [d.order_id for d in rep.decisions] == ["a", "b", "late"]
    assert decisions(rep)[1][1] is Decision.Reject        # "old" already holds one of the two slots
    assert rep.throughput == 1 and rep.edge_accepted == 1


def test_unmanaged_delivery_occupies_a_slot():
    cfg = make_config(capacity=1, n_options=1)
    evs = sort_events([ev("u", "Delivery", 1, 100), ev("u", "Pickup", 1, 60000)] + order("a", 1, 1, 1, 1, req_seq=200))
    rep = replay(evs, AdmissionPolicy.fcfs(surv(1)), cfg)
    assert rep.requests == 1 and rep.accepted == 0


@pytest.mark.parametrize("evs, match", [
    ([ev("a", "Request", 2), ev("a", "Delivery", 1)], "order"),
    ([ev("a", "Request", 0, locker="M"), ev("a", "Delivery", 1, locker="M")], "locker"),
    ([ev("a", "Request", 0, option=9), ev("a", "Delivery", 1, option=9)], "ship option"),
    ([ev("a", "Request", 0)], "no recorded Delivery"),
])
def test_replay_errors(evs, match):
    with pytest.raises(ReplayError, match=match):
        replay(evs, AdmissionPolicy.fcfs(surv(1)), make_config(n_options=1))


def test_policy_validation():
    with pytest.raises(ReplayError):
        AdmissionPolicy.reservation(surv(1))
    with pytest.raises(ReplayError):
        AdmissionPolicy.proportion(None, surv(1))
    with pytest.raises(ValueError):
        DecisionRecord("a", 0, 1, Decision.Accept, Reason.CapacityFull)


def test_compare_identical_policies():
    cfg = make_config(capacity=2, n_options=1)
    evs = sort_events(order("a", 1, 0, 1, 1) + order("b", 1, 0, 1, 2, req_seq=3))
    cmp = compare_policies(evs, {"one": AdmissionPolicy.fcfs(surv(1)), "two": AdmissionPolicy.fcfs(surv(1))}, cfg)
    assert cmp.uplift("two") == 0.0 and set(cmp.pairwise().values()) == {0.0}
    with pytest.raises(ReplayError):
        compare_policies(evs, [AdmissionPolicy.fcfs(surv(1))], cfg)
    assert pct_delta(0, 0) == 0.0 and pct_delta(110, 100) == pytest.approx(10)


def test_trace_roundtrip(tmp_path):
    cfg = make_config(capacity=1, n_options=1)
    evs = sort_events(order("a", 1, 0, 1, 1) + order("b", 1, 0, 1, 1, req_seq=10))
    rep = replay(evs, AdmissionPolicy.fcfs(surv(1)), cfg)
    path = tmp_path / "trace.csv"
    write_trace(path, rep.decisions)
    assert path.read_text().splitlines() == [
        "order_id,day,option,decision,reason,hindsight", "a,0,1,Accept,Accepted,0", "b,0,1,Reject,CapacityFull,0"]
    back = read_trace(path)
    assert [(d.order_id, d.decision, d.reason) for d in back] == decisions(rep)


def test_zero_demand_plan_rejects_everything():
    from lockeryield.core import Carryover
    from lockeryield.dwell import pmf_to_presence
    from lockeryield.optimize import build_lp, limits_by_day, solve_lp

    cfg = make_config(capacity=5, n_options=2, horizon=3)
    pmfs = np.tile(np.eye(1, N_DWELL), (2, 1))
    plan = solve_lp(build_lp(np.zeros((2, 3)), pmf_to_presence(pmfs, 3), Carryover(np.zeros((2, N_DWELL))), cfg))
    pol = AdmissionPolicy.reservation(surv(2), limits=limits_by_day(plan, 0))
    evs = sort_events(order("a", 1, 0, 1, 1) + order("b", 2, 0, 3, 3, req_seq=4))
    rep = replay(evs, pol, cfg)
    assert [d.reason for d in rep.decisions] == [Reason.LimitExhausted] * 2
