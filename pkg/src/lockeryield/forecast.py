"""Per-ship-option demand forecasting with one regression forest per horizon day."""
from __future__ import annotations

import datetime as _dt
import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_EPOCH,
    ConfigError,
    LockerConfig,
    LockerError,
    PackageEvent,
    day_to_date,
    mean_capacity_normalized_error,
)
from .history import HomeDeliveries, LockerHistory, date_features, same_weekday_days
from .trees import Forest, ForestParams, fit_forest

FORECAST_FORMAT = "lockeryield.forecast"
FORECAST_VERSION = 1
DEFAULT_PEAK_WEEKS = (47, 48, 49, 50)
FEATURE_NAMES = (
    "recent_1", "recent_2", "recent_3", "recent_4",
    "home_deliveries_ly", "first_rejection_time",
    "delivery_dow", "delivery_dom", "ship_option", "home_missing",
)


class TrainingError(LockerError):
    pass


@dataclass(frozen=True)
class ForecastFeatureRow:
    recent_deliveries: tuple[float, float, float, float]
    home_deliveries_ly: float
    first_rejection_time: float
    delivery_dow: int
    delivery_dom: int
    ship_option: int
    home_missing: bool = False

    def __post_init__(self):
        if len(self.recent_deliveries) != 4 or min(self.recent_deliveries) < 0:
            raise ValueError(f"recent_deliveries must be 4 non-negative counts, got {self.recent_deliveries}")
        if self.home_deliveries_ly < 0:
            raise ValueError("home_deliveries_ly must be non-negative")
        if not 0.0 <= self.first_rejection_time <= 1.0:
            raise ValueError(f"first_rejection_time must lie in [0, 1], got {self.first_rejection_time}")
        if not 0 <= self.delivery_dow <= 6 or not 1 <= self.delivery_dom <= 31:
            raise ValueError("bad calendar features")

    def as_array(self) -> np.ndarray:
        return np.array([*self.recent_deliveries, self.home_deliveries_ly, self.first_rejection_time,
                         self.delivery_dow, self.delivery_dom, self.ship_option, float(self.home_missing)])


@dataclass(frozen=True)
class DemandForecast:
    """Predicted deliveries ``values[s, t-1]`` for option ``s+1`` on horizon day ``t``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or not np.isfinite(v).all() or (v < 0).any():
            raise ValueError("demand forecast must be a finite non-negative S x T matrix")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class RegressionForest:
    forest: Forest
    horizon_day: int
    rng_seed: int
    target_min: float = 0.0
    target_max: float = 0.0

    @property
    def trees(self):
        return self.forest.trees

    def predict(self, X) -> np.ndarray:
        return self.forest.predict(X)[:, 0]

    def to_dict(self) -> dict:
        return {"horizon_day": self.horizon_day, "rng_seed": self.rng_seed,
                "target_min": self.target_min, "target_max": self.target_max,
                "forest": self.forest.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> RegressionForest:
        return cls(Forest.from_dict(d["forest"]), int(d["horizon_day"]), int(d["rng_seed"]),
                   float(d["target_min"]), float(d["target_max"]))


@dataclass
class ForecastSettings:
    training_weeks: int = 16
    min_weeks: int = 4
    peak_weeks: tuple[int, ...] = DEFAULT_PEAK_WEEKS
    epoch: _dt.date = DEFAULT_EPOCH
    params: ForestParams = field(default_factory=ForestParams)


def feature_row(history: LockerHistory, home: HomeDeliveries, zip_code: str, option: int,
                target_day: int, run_date: int, epoch: _dt.date = DEFAULT_EPOCH) -> ForecastFeatureRow:
    """Features for predicting deliveries of ``option`` on ``target_day`` as seen at the end of ``run_date``."""
    s = option - 1
    recent = tuple(history.delivered(s, u) for u in same_weekday_days(target_day, run_date))
    count, missing = home.last_year(zip_code, day_to_date(target_day, epoch), option)
    dow, dom = date_features(target_day, epoch)
    return ForecastFeatureRow(recent, count, history.rejection_time(s, run_date), dow, dom, option, missing)


def training_days(run_date: int, settings: ForecastSettings) -> list[int]:
    """Target days: the weeks before the run date plus last year's peak weeks."""
    recent = list(range(run_date - 7 * settings.training_weeks + 1, run_date + 1))
    year = day_to_date(run_date, settings.epoch).year - 1
    peak = []
    # scan back far enough to reach last year's peak weeks
    for day in range(run_date - 7 * settings.training_weeks, run_date - 450, -1):
        iy, iw, _ = day_to_date(day, settings.epoch).isocalendar()
        if iy == year and iw in settings.peak_weeks:
            peak.append(day)
    return sorted(set(recent) | set(peak))


def build_training_set(history: LockerHistory, home: HomeDeliveries, zip_code: str, run_date: int,
                       horizon_day: int, settings: ForecastSettings | None = None) -> list[tuple[ForecastFeatureRow, float]]:
    """One row per (option, target day) whose target and 4-week lookback lie inside the history."""
    settings = settings or ForecastSettings()
    rows = []
    for day in training_days(run_date, settings):
        if day > history.end_day or day - 28 < history.start_day:
            continue
        known = day - horizon_day
        for option in range(1, history.n_options + 1):
            row = feature_row(history, home, zip_code, option, day, known, settings.epoch)
            rows.append((row, history.delivered(option - 1, day)))
    return rows


def history_weeks(history: LockerHistory, run_date: int) -> float:
    return (min(run_date, history.end_day) - history.start_day + 1) / 7.0


def train_forest(rows: Sequence[tuple[ForecastFeatureRow, float]], params: ForestParams | None = None,
                 seed: int = 0, horizon_day: int = 1) -> RegressionForest:
    if not rows:
        raise TrainingError("empty training set")
    params = params or ForestParams()
    X = np.vstack([r.as_array() for r, _ in rows])
    y = np.array([t for _, t in rows], dtype=float)
    forest, _ = fit_forest(X, y, np.ones(len(y)), params, seed)
    return RegressionForest(forest, horizon_day, seed, float(y.min()), float(y.max()))


@dataclass
class ForecastModel:
    forests: dict[int, RegressionForest]

    @property
    def horizon(self) -> int:
        return max(self.forests)

    def to_json(self) -> str:
        doc = {"format": FORECAST_FORMAT, "version": FORECAST_VERSION,
               "feature_names": list(FEATURE_NAMES),
               "forests": {str(h): f.to_dict() for h, f in sorted(self.forests.items())}}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> ForecastModel:
        doc = json.loads(text)
        if doc.get("format") != FORECAST_FORMAT or doc.get("version") != FORECAST_VERSION:
            raise ConfigError("not a forecast model artifact of a supported version")
        return cls({int(h): RegressionForest.from_dict(f) for h, f in doc["forests"].items()})


def train_forecast_model(training: Mapping[int, Sequence[tuple[ForecastFeatureRow, float]]],
                         params: ForestParams | None = None, seed: int = 0) -> ForecastModel:
    """Train one forest per horizon day; forest ``h`` is seeded with ``seed + h``."""
    return ForecastModel({h: train_forest(rows, params, seed + h, h) for h, rows in sorted(training.items())})


def predict_demand(forests: Mapping[int, RegressionForest],
                   features: Mapping[tuple[int, int], ForecastFeatureRow], n_options: int, horizon: int) -> DemandForecast:
    """``features[(s, t)]`` for every option id ``s`` and horizon day ``t``."""
    missing = [t for t in range(1, horizon + 1) if t not in forests]
    if missing:
        raise ConfigError(f"no trained forest for horizon days {missing}")
    out = np.zeros((n_options, horizon))
    for t in range(1, horizon + 1):
        X = np.vstack([features[(s, t)].as_array() for s in range(1, n_options + 1)])
        out[:, t - 1] = forests[t].predict(X)
    return DemandForecast(np.maximum(out, 0.0))


def proportion_rule_forecast(home_counts, capacity: float) -> np.ndarray:
    """Slots per option proportional to last year's home deliveries in the zip code."""
    h = np.asarray(home_counts, dtype=float)
    if (h < 0).any():
        raise ValueError("home counts must be non-negative")
    if h.sum() <= 0:
        return np.full(len(h), capacity / len(h))
    return capacity * h / h.sum()


def forecast_nmape(forecast, actuals, capacity) -> float:
    f = forecast.values if isinstance(forecast, DemandForecast) else np.asarray(forecast, dtype=float)
    a = np.asarray(actuals, dtype=float)
    if f.shape != a.shape:
        raise ValueError(f"forecast shape {f.shape} does not match actuals {a.shape}")
    return mean_capacity_normalized_error(a, f, capacity)


def events_training_set(events: Sequence[PackageEvent], config: LockerConfig, home: HomeDeliveries, zip_code: str,
                        run_date: int, horizon_day: int, settings: ForecastSettings | None = None):
    """Convenience wrapper building the history from a raw event log."""
    history = LockerHistory.from_events(events, config, end_day=run_date)
    return build_training_set(history, home, zip_code, run_date, horizon_day, settings)
