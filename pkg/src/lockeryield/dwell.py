"""Dwell-time distributions: classifier, calibration, presence probabilities and the pickup metric."""
from __future__ import annotations

import datetime as _dt
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_EPOCH,
    MAX_DWELL,
    N_DWELL,
    ConfigError,
    mean_capacity_normalized_error,
)
from .history import LockerHistory, date_features, same_weekday_days
from .isotonic import CalibrationMap, fit_isotonic
from .trees import Forest, ForestParams, fit_forest

log = logging.getLogger(__name__)

DWELL_FORMAT = "lockeryield.dwell"
DWELL_VERSION = 1
SPARSE_PACKAGES = 10
MIN_CALIBRATION_ROWS = 20
PMF_TOL = 1e-9


class InvalidPmfError(ConfigError):
    pass


@dataclass(frozen=True)
class DwellFeatureRow:
    avg_dwell: float
    min_dwell: float
    max_dwell: float
    ship_option: int
    delivery_dow: int
    delivery_dom: int

    def __post_init__(self):
        if not 0 <= self.min_dwell <= self.avg_dwell + 1e-12 <= self.max_dwell + 2e-12 <= MAX_DWELL + 2e-12:
            raise ValueError(f"dwell stats must satisfy 0 <= min <= avg <= max <= {MAX_DWELL}")

    def as_array(self) -> np.ndarray:
        return np.array([self.avg_dwell, self.min_dwell, self.max_dwell,
                         self.ship_option, self.delivery_dow, self.delivery_dom], dtype=float)


@dataclass(frozen=True)
class DwellPmf:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        check_pmf(p)
        object.__setattr__(self, "probs", p)

    def survival(self) -> np.ndarray:
        """``P(dwell >= k)`` for k = 0..6."""
        return survival(self.probs)

    @property
    def mean(self) -> float:
        return float(np.arange(N_DWELL) @ self.probs)


def check_pmf(p: np.ndarray) -> None:
    if p.shape[-1] != N_DWELL:
        raise InvalidPmfError(f"dwell pmf must have {N_DWELL} entries, got shape {p.shape}")
    if not np.isfinite(p).all() or (p < 0).any() or (p > 1 + PMF_TOL).any():
        raise InvalidPmfError("dwell pmf entries must lie in [0, 1]")
    if (np.abs(p.sum(axis=-1) - 1.0) > PMF_TOL).any():
        raise InvalidPmfError(f"dwell pmf must sum to 1 within {PMF_TOL}")


def survival(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    s = np.cumsum(p[..., ::-1], axis=-1)[..., ::-1]
    # lag 0 is certain presence by convention, whatever the rounding
    s[..., 0] = 1.0
    return np.clip(s, 0.0, 1.0)


def normalize(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=float), 0.0, None)
    return p / p.sum(axis=-1, keepdims=True)


def laplace_pmf(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=float)
    return (c + 1.0) / (c.sum(axis=-1, keepdims=True) + N_DWELL)


@dataclass(frozen=True)
class PresenceMatrix:
    """``values[s, v + 6, t - 1]``: option ``s+1`` delivered on day ``v`` in the locker on day ``t``.

    Delivery days run from -6 to T, horizon days from 1 to T.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != v.shape[2] + N_DWELL:
            raise ConfigError(f"presence matrix must be S x (T+7) x T, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def n_options(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> int:
        return self.values.shape[2]

    def p(self, option: int, v: int, t: int) -> float:
        return float(self.values[option - 1, v + MAX_DWELL, t - 1])

    def violations(self, tol: float = 1e-12) -> list[str]:
        """Invariant breaches; an empty list means the matrix is well formed."""
        out = []
        S, T = self.n_options, self.horizon
        vals = self.values
        if (vals < -tol).any() or (vals > 1 + tol).any():
            out.append("entries outside [0, 1]")
        for s in range(S):
            for vi in range(T + N_DWELL):
                v = vi - MAX_DWELL
                row = vals[s, vi]
                if 1 <= v <= T and abs(row[v - 1] - 1.0) > tol:
                    out.append(f"p[{s + 1},{v},{v}] = {row[v - 1]} != 1")
                lo = max(v, 1)
                seg = row[lo - 1:]
                if (np.diff(seg) > tol).any():
                    out.append(f"p[{s + 1},{v},t] increases in t")
                for t in range(1, T + 1):
                    if (t < v or t - v > MAX_DWELL) and abs(row[t - 1]) > tol:
                        out.append(f"p[{s + 1},{v},{t}] = {row[t - 1]} should be 0")
        return out


def pmf_to_presence(pmfs, horizon: int, *, conditional_carryover: bool = False) -> PresenceMatrix:
    """Tail sums of the dwell pmfs.

    ``pmfs`` is either ``(S, 7)`` (one pmf per option) or ``(S, horizon + 7, 7)``
    (one per option and delivery day -6..T). With ``conditional_carryover``
    the pre-horizon rows condition on the package still being present at the
    end of day 0, which is what the carryover counts record.
    """
    q = np.asarray([p.probs if isinstance(p, DwellPmf) else p for p in pmfs] if isinstance(pmfs, Sequence) else pmfs,
                   dtype=float)
    if q.ndim == 2:
        q = np.repeat(q[:, None, :], horizon + N_DWELL, axis=1)
    S = q.shape[0]
    if q.shape != (S, horizon + N_DWELL, N_DWELL):
        raise ConfigError(f"pmfs must be S x 7 or S x {horizon + N_DWELL} x 7, got {q.shape}")
    check_pmf(q)
    surv = survival(q)
    out = np.zeros((S, horizon + N_DWELL, horizon))
    for vi in range(horizon + N_DWELL):
        v = vi - MAX_DWELL
        for t in range(max(v, 1), min(horizon, v + MAX_DWELL) + 1):
            lag = t - v
            if conditional_carryover and v <= 0:
                base = surv[:, vi, -v]
                cond = np.divide(surv[:, vi, lag], base, out=np.ones(S), where=base > 0)
                out[:, vi, t - 1] = np.minimum(cond, 1.0)
            else:
                out[:, vi, t - 1] = surv[:, vi, lag]
    return PresenceMatrix(out)


# --- classifier -------------------------------------------------------------

@dataclass
class DwellClassifier:
    """Calibrated dwell-class model with a pooled empirical fallback.

    ``pooled[s]`` is the Laplace-smoothed empirical pmf of option ``s+1`` over
    all training packages.
    """

    forest: Forest | None
    maps: tuple[CalibrationMap, ...]
    pooled: np.ndarray
    n_packages: int = 0

    @property
    def n_options(self) -> int:
        return self.pooled.shape[0]

    def raw_scores(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.forest is None:
            return self.pooled[X[:, 3].astype(int) - 1]
        return self.forest.predict(X)

    def predict_pmf(self, X, n_recent=None) -> np.ndarray:
        """Calibrated pmfs, blended toward the pooled pmf where recent data is sparse."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        opts = X[:, 3].astype(int) - 1
        fallback = self.pooled[opts]
        if self.forest is None:
            return fallback.copy()
        raw = self.raw_scores(X)
        pmf = np.vstack([calibrated_pmf(r, self.maps, fb).probs for r, fb in zip(raw, fallback)])
        if n_recent is not None:
            w = np.clip(np.asarray(n_recent, dtype=float) / SPARSE_PACKAGES, 0.0, 1.0)[:, None]
            pmf = w * pmf + (1 - w) * fallback
            pmf = pmf / pmf.sum(axis=1, keepdims=True)
        return pmf

    def to_dict(self) -> dict:
        return {
            "format": DWELL_FORMAT,
            "version": DWELL_VERSION,
            "n_packages": self.n_packages,
            "pooled_pmfs": self.pooled.tolist(),
            "calibration": [m.to_dict() for m in self.maps],
            "forest": None if self.forest is None else self.forest.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> DwellClassifier:
        if d.get("format") != DWELL_FORMAT or d.get("version") != DWELL_VERSION:
            raise ConfigError("not a dwell model artifact of a supported version")
        forest = None if d["forest"] is None else Forest.from_dict(d["forest"])
        return cls(forest, tuple(CalibrationMap.from_dict(m) for m in d["calibration"]),
                   np.asarray(d["pooled_pmfs"], dtype=float), int(d["n_packages"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> DwellClassifier:
        return cls.from_dict(json.loads(text))


def train_dwell_classifier(X, class_counts, params: ForestParams | None = None, seed: int = 0, *,
                           n_options: int | None = None, calibrate: bool = True) -> DwellClassifier:
    """Fit the dwell classifier on grouped rows.

    Each row of ``X`` is a DwellFeatureRow array for one (locker, option,
    delivery day) group; ``class_counts[i, k]`` counts its packages with
    dwell ``k``. Calibration maps are fitted one-vs-rest on out-of-bag scores.
    """
    params = params or ForestParams(max_features=3)
    X = np.asarray(X, dtype=float).reshape(-1, 6)
    C = np.asarray(class_counts, dtype=float).reshape(-1, N_DWELL)
    if n_options is None:
        n_options = int(X[:, 3].max()) if len(X) else 1
    pooled_counts = np.zeros((n_options, N_DWELL))
    for s in range(n_options):
        pooled_counts[s] = C[X[:, 3] == s + 1].sum(axis=0)
    pooled = laplace_pmf(pooled_counts)
    identity = tuple(CalibrationMap() for _ in range(N_DWELL))
    keep = C.sum(axis=1) > 0
    X, C = X[keep], C[keep]
    if len(X) == 0:
        log.warning("no dwell observations; using the uniform pooled pmf")
        return DwellClassifier(None, identity, pooled, 0)
    totals = C.sum(axis=1)
    forest, order = fit_forest(X, C, totals, params, seed, keep_oob=calibrate)
    maps = identity
    if calibrate:
        oob = forest.oob_value
        ok = np.isfinite(oob).all(axis=1)
        if ok.sum() >= MIN_CALIBRATION_ROWS:
            Cc, Tc = C[order][ok], totals[order][ok]
            maps = tuple(fit_isotonic(oob[ok, k], Cc[:, k] / Tc, Tc) for k in range(N_DWELL))
        forest.oob_value = None
    return DwellClassifier(forest, maps, pooled, int(totals.sum()))


def calibrated_pmf(raw_scores, maps: Sequence[CalibrationMap], fallback=None) -> DwellPmf:
    raw = np.asarray(raw_scores, dtype=float)
    if raw.shape != (N_DWELL,) or (raw < -1e-12).any() or (raw > 1 + 1e-12).any():
        raise ValueError("raw scores must be 7 values in [0, 1]")
    cal = np.array([float(m(r)) for m, r in zip(maps, raw)])
    total = cal.sum()
    if total <= 0:
        if fallback is None:
            return DwellPmf(np.full(N_DWELL, 1.0 / N_DWELL))
        return DwellPmf(normalize(fallback))
    return DwellPmf(cal / total)


# --- feature construction ---------------------------------------------------

def dwell_stats(history: LockerHistory, option: int, target_day: int, known_through: int) -> tuple[float, float, float, int]:
    """(avg, min, max, n) over same-weekday deliveries of the previous four weeks whose dwell is resolved."""
    s = option - 1
    hist = np.zeros(N_DWELL)
    for u in same_weekday_days(target_day, known_through - MAX_DWELL):
        hist += history.dwell_hist(s, u)
    n = int(hist.sum())
    if n == 0:
        return -1.0, -1.0, -1.0, 0
    ks = np.flatnonzero(hist)
    return float(np.arange(N_DWELL) @ hist / n), float(ks.min()), float(ks.max()), n


def dwell_feature_row(history: LockerHistory, option: int, delivery_day: int, known_through: int,
                      default_mean: float, epoch: _dt.date = DEFAULT_EPOCH) -> tuple[DwellFeatureRow, int]:
    avg, lo, hi, n = dwell_stats(history, option, delivery_day, known_through)
    if n == 0:
        avg = lo = hi = default_mean
    dow, dom = date_features(delivery_day, epoch)
    return DwellFeatureRow(avg, lo, hi, option, dow, dom), n


def dwell_training_rows(history: LockerHistory, first_day: int, last_day: int,
                        default_means: Sequence[float], epoch: _dt.date = DEFAULT_EPOCH):
    """Grouped training rows for delivery days in ``[first_day, last_day]``.

    Features are computed as of the day before delivery.
    """
    X, counts = [], []
    for day in range(max(first_day, history.start_day), min(last_day, history.end_day) + 1):
        for option in range(1, history.n_options + 1):
            c = history.dwell_hist(option - 1, day)
            if c.sum() == 0:
                continue
            row, _ = dwell_feature_row(history, option, day, day - 1, default_means[option - 1], epoch)
            X.append(row.as_array())
            counts.append(c.copy())
    if not X:
        return np.zeros((0, 6)), np.zeros((0, N_DWELL))
    return np.vstack(X), np.vstack(counts)


def plan_day_pmfs(model: DwellClassifier, history: LockerHistory, plan_day: int, horizon: int,
                  epoch: _dt.date = DEFAULT_EPOCH, per_option: bool = False) -> np.ndarray:
    """Pmfs ``(S, horizon + 7, 7)`` for delivery days plan_day-6 .. plan_day+horizon."""
    S = model.n_options
    means = model.pooled @ np.arange(N_DWELL)
    X, n = [], []
    for s in range(1, S + 1):
        for vi in range(horizon + N_DWELL):
            row, k = dwell_feature_row(history, s, plan_day + vi - MAX_DWELL, plan_day, means[s - 1], epoch)
            X.append(row.as_array())
            n.append(k)
    pmf = model.predict_pmf(np.vstack(X), n).reshape(S, horizon + N_DWELL, N_DWELL)
    if per_option:
        pmf = np.repeat(pmf.mean(axis=1, keepdims=True), horizon + N_DWELL, axis=1)
    return pmf


# --- metric -----------------------------------------------------------------

def expected_departures(delivery_counts, pmfs) -> np.ndarray:
    """Expected pickups+returns per day from deliveries ``(S, n_days)`` and pmfs.

    ``pmfs`` is ``(S, 7)`` or ``(S, n_days, 7)`` (per delivery day).
    """
    d = np.asarray(delivery_counts, dtype=float)
    q = np.asarray(pmfs, dtype=float)
    if q.ndim == 2:
        q = np.repeat(q[:, None, :], d.shape[1], axis=1)
    out = np.zeros(d.shape[1])
    for k in range(min(N_DWELL, d.shape[1])):
        out[k:] += (d[:, : d.shape[1] - k] * q[:, : d.shape[1] - k, k]).sum(axis=0)
    return out


def pickup_error_metric(expected_pickups, actual_pickups, capacity) -> float:
    """Mean over lockers and days of ``|actual - expected| / capacity``.

    Arrays are ``(n_lockers, n_days)`` or flat; ``capacity`` broadcasts per locker.
    """
    e = np.asarray(expected_pickups, dtype=float)
    a = np.asarray(actual_pickups, dtype=float)
    cap = np.asarray(capacity, dtype=float)
    if e.shape != a.shape:
        raise ValueError(f"shape mismatch {e.shape} vs {a.shape}")
    if cap.ndim == 1 and e.ndim == 2:
        cap = cap[:, None]
    return mean_capacity_normalized_error(a, e, cap)


@dataclass
class DwellModelSet:
    """Dwell classifiers keyed by locker pool (zip code by default)."""

    models: dict[str, DwellClassifier] = field(default_factory=dict)

    def for_pool(self, key: str) -> DwellClassifier:
        try:
            return self.models[key]
        except KeyError:
            raise ConfigError(f"no dwell model for pool {key!r}") from None

    def to_json(self) -> str:
        return json.dumps({"format": DWELL_FORMAT + ".set", "version": DWELL_VERSION,
                           "pools": {k: m.to_dict() for k, m in sorted(self.models.items())}},
                          sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> DwellModelSet:
        doc = json.loads(text)
        if doc.get("format") != DWELL_FORMAT + ".set":
            raise ConfigError("not a dwell model set artifact")
        return cls({k: DwellClassifier.from_dict(v) for k, v in doc["pools"].items()})


def pooled_histories_rows(histories: Mapping[str, LockerHistory], first_day: int, last_day: int,
                          n_options: int, epoch: _dt.date = DEFAULT_EPOCH):
    """Stack grouped training rows over several lockers of one pool."""
    totals = np.zeros((n_options, N_DWELL))
    for h in histories.values():
        lo, hi = max(first_day, h.start_day) - h.start_day, min(last_day, h.end_day) - h.start_day + 1
        if hi > lo:
            totals += h.dwell_counts[:, lo:hi].sum(axis=1)
    means = laplace_pmf(totals) @ np.arange(N_DWELL)
    Xs, Cs = [], []
    for _, h in sorted(histories.items()):
        X, C = dwell_training_rows(h, first_day, last_day, means, epoch)
        Xs.append(X)
        Cs.append(C)
    if not Xs:
        return np.zeros((0, 6)), np.zeros((0, N_DWELL))
    return np.vstack(Xs), np.vstack(Cs)
