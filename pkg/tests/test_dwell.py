import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_config, order
from lockeryield.core import sort_events
from lockeryield.dwell import (
    DwellClassifier,
    DwellModelSet,
    DwellPmf,
    InvalidPmfError,
    calibrated_pmf,
    check_pmf,
    dwell_stats,
    dwell_training_rows,
    expected_departures,
    pickup_error_metric,
    plan_day_pmfs,
    pmf_to_presence,
    survival,
    train_dwell_classifier,
)
from lockeryield.history import LockerHistory
from lockeryield.isotonic import CalibrationMap
from lockeryield.trees import ForestParams

IDENT = tuple(CalibrationMap() for _ in range(7))


def test_pmf_validation():
    DwellPmf(np.full(7, 1 / 7))
    with pytest.raises(InvalidPmfError):
        DwellPmf(np.full(6, 1 / 6))
    with pytest.raises(InvalidPmfError):
        check_pmf(np.array([0.5, 0.6, 0, 0, 0, 0, 0]))
    with pytest.raises(InvalidPmfError):
        check_pmf(np.array([1.2, -0.2, 0, 0, 0, 0, 0]))


def test_presence_examples():
    p = pmf_to_presence(np.array([[1, 0, 0, 0, 0, 0, 0.0]]), 3)
    assert p.p(1, 1, 1) == 1 and p.p(1, 1, 2) == 0
    u = pmf_to_presence(np.full((1, 7), 1 / 7), 7)
    assert u.p(1, 1, 4) == pytest.approx(4 / 7)
    assert u.p(1, 1, 7) == pytest.approx(1 / 7)
    assert u.p(1, -6, 1) == 0.0          # lag 7
    assert u.violations() == []


def test_conditional_carryover_rescales_old_deliveries():
    q = np.full((1, 7), 1 / 7)
    p = pmf_to_presence(q, 2, conditional_carryover=True)
    # delivered on day -2, still present at end of day 0 (lag 2): P(lag 3 | lag 2) = (4/7) / (5/7)
    assert p.p(1, -2, 1) == pytest.approx(0.8)
    assert p.p(1, 0, 1) == pytest.approx(6 / 7)
    assert p.p(1, 1, 1) == 1.0


@settings(deadline=None)
@given(st.integers(1, 4), st.integers(1, 7), st.data(), st.booleans())
def test_presence_invariants(S, T, data, cond):
    q = np.array([data.draw(st.lists(st.floats(0, 1), min_size=7, max_size=7).filter(lambda v: sum(v) > 0.01))
                  for _ in range(S)])
    q = q / q.sum(axis=1, keepdims=True)
    p = pmf_to_presence(q, T, conditional_carryover=cond)
    assert p.violations() == []


def test_calibrated_pmf_examples():
    raw = np.array([0.5, 0.5, 0, 0, 0, 0, 0])
    assert calibrated_pmf(raw, IDENT).probs == pytest.approx(raw)
    raw2 = np.array([0.2, 0.2, 0.2, 0.0, 0.0, 0.0, 0.0])
    assert calibrated_pmf(raw2, IDENT).probs.sum() == pytest.approx(1.0, abs=1e-12)
    zero = tuple(CalibrationMap((0.0,), (0.0,)) for _ in range(7))
    fb = np.array([0.4, 0.6, 0, 0, 0, 0, 0])
    assert calibrated_pmf(raw, zero, fb).probs == pytest.approx(fb)
    with pytest.raises(ValueError):
        calibrated_pmf(np.ones(6), IDENT)


def rows_with_dwell(dwells_by_option, n=60):
    X, C = [], []
    for i in range(n):
        for s, k in dwells_by_option.items():
            X.append([k, k, k, s, i % 7, 1 + i % 28])
            c = np.zeros(7)
            c[k] = 3
            C.append(c)
    return np.array(X, dtype=float), np.array(C)


def test_classifier_degenerate_class():
    X, C = rows_with_dwell({1: 0})
    model = train_dwell_classifier(X, C, ForestParams(n_trees=10), seed=3, n_options=1)
    raw = model.raw_scores(X[:5])
    assert raw[:, 0] == pytest.approx(1.0)
    assert model.predict_pmf(X[:5])[:, 0] == pytest.approx(1.0)


def test_classifier_two_extremes_are_smoothed():
    X = np.array([[3, 0, 6, 1, 2, 10], [3, 0, 6, 1, 2, 10]], dtype=float)
    C = np.array([[1, 0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0, 1]], dtype=float)
    model = train_dwell_classifier(X, C, ForestParams(n_trees=20), seed=0, n_options=1)
    # pooled fallback spreads mass over every class instead of {0.5, 0, ..., 0.5}
    assert (model.pooled[0] > 0).all()
    pmf = model.predict_pmf(X[:1], n_recent=[2])
    assert (pmf[0, 1:6] > 0).all()


def test_classifier_deterministic_and_serializable():
    X, C = rows_with_dwell({1: 0, 2: 3})
    a = train_dwell_classifier(X, C, ForestParams(n_trees=15), seed=9, n_options=2)
    b = train_dwell_classifier(X, C, ForestParams(n_trees=15), seed=9, n_options=2)
    assert a.to_json() == b.to_json()
    back = DwellClassifier.from_json(a.to_json())
    assert np.array_equal(back.predict_pmf(X), a.predict_pmf(X))
    sets = DwellModelSet({"Z": a})
    assert DwellModelSet.from_json(sets.to_json()).models["Z"].to_json() == a.to_json()
    pm = a.predict_pmf(X)
    assert np.abs(pm.sum(axis=1) - 1).max() <= 1e-9
    assert pm[X[:, 3] == 2].argmax(axis=1).tolist() == [3] * int((X[:, 3] == 2).sum())


def test_classifier_without_data_uses_uniform_pool():
    model = train_dwell_classifier(np.zeros((0, 6)), np.zeros((0, 7)), n_options=2)
    assert model.forest is None
    assert model.predict_pmf([[0, 0, 0, 2, 0, 1]])[0] == pytest.approx(np.full(7, 1 / 7))


def history_with_dwell(k, days=range(0, 40), option=1):
    evs = []
    for d in days:
        evs += order(f"o{d}", option, d - 1, d, d + k)
    return LockerHistory.from_events(sort_events(evs), make_config(capacity=50))


def test_dwell_features_and_rows():
    h = history_with_dwell(2)
    avg, lo, hi, n = dwell_stats(h, 1, 35, 34)
    assert (avg, lo, hi, n) == (2.0, 2.0, 2.0, 4)
    X, C = dwell_training_rows(h, 10, 30, [1.0] * 4)
    assert len(X) == 21 and (C[:, 2] == 1).all()
    assert (X[:, 0] == 2).all() or (X[:, 0] == 1).any()       # early rows fall back to the default mean


def test_plan_day_pmfs_shape_and_per_option():
    h = history_with_dwell(1)
    X, C = dwell_training_rows(h, 0, 39, [1.0] * 4)
    model = train_dwell_classifier(X, C, ForestParams(n_trees=10), seed=1, n_options=4)
    q = plan_day_pmfs(model, h, 30, 7)
    assert q.shape == (4, 14, 7) and np.abs(q.sum(axis=-1) - 1).max() <= 1e-9
    assert q[0, :, 1].min() > 0.5
    flat = plan_day_pmfs(model, h, 30, 7, per_option=True)
    assert np.allclose(flat[:, 0], flat[:, 5])


def test_expected_departures_and_metric():
    deliveries = np.array([[2, 0, 0]])
    same_day = np.array([[1, 0, 0, 0, 0, 0, 0.0]])
    assert expected_departures(deliveries, same_day).tolist() == [2, 0, 0]
    two_day = np.array([[0, 0, 1, 0, 0, 0, 0.0]])
    assert expected_departures(deliveries, two_day).tolist() == [0, 0, 2]
    assert pickup_error_metric([3.5], [4], 10) == pytest.approx(0.05)
    assert pickup_error_metric([[2, 0, 0]], [[2, 0, 0]], [5]) == 0.0
    # all-same-day belief against a trace that really waits two days
    err = pickup_error_metric([expected_departures(deliveries, same_day)], [[0, 0, 2]], [10])
    assert err == pytest.approx((2 + 0 + 2) / 30)
    with pytest.raises(ValueError):
        pickup_error_metric([1, 2], [1], 5)


def test_survival_lag_zero_is_one():
    s = survival(np.array([0.3, 0.3, 0.4, 0, 0, 0, 0]))
    assert s[0] == 1.0 and s[3] == 0.0 and s[2] == pytest.approx(0.4)
