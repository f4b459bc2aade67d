"""Per-locker daily aggregates of an observed (production) event log."""
from __future__ import annotations

import datetime as _dt
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DEFAULT_EPOCH,
    MAX_DWELL,
    N_DWELL,
    EventKind,
    LockerConfig,
    PackageEvent,
    day_to_date,
    time_of_day_fraction,
)


@dataclass
class LockerHistory:
    """Daily delivery counts, first-rejection times and dwell outcomes.

    Arrays are indexed ``[option_index, day - start_day]``. A Request with no
    Delivery in the log is read as a rejected request.
    """

    locker_id: str
    start_day: int
    end_day: int
    deliveries: np.ndarray          # (S, n_days)
    first_rejection: np.ndarray     # (S, n_days), 1.0 when nothing was rejected
    dwell_counts: np.ndarray        # (S, n_days, 7) by delivery day
    clamped_dwells: int = 0

    @property
    def n_options(self) -> int:
        return self.deliveries.shape[0]

    @property
    def n_days(self) -> int:
        return self.end_day - self.start_day + 1

    def covers(self, day: int) -> bool:
        return self.start_day <= day <= self.end_day

    def delivered(self, s: int, day: int) -> float:
        return float(self.deliveries[s, day - self.start_day]) if self.covers(day) else 0.0

    def rejection_time(self, s: int, day: int) -> float:
        return float(self.first_rejection[s, day - self.start_day]) if self.covers(day) else 1.0

    def dwell_hist(self, s: int, day: int) -> np.ndarray:
        if not self.covers(day):
            return np.zeros(N_DWELL)
        return self.dwell_counts[s, day - self.start_day]

    def departures(self) -> np.ndarray:
        """Observed pickups plus returns per (option, day)."""
        out = np.zeros_like(self.deliveries, dtype=float)
        for k in range(min(N_DWELL, self.n_days)):
            out[:, k:] += self.dwell_counts[:, : self.n_days - k, k]
        return out

    @classmethod
    def from_events(cls, events: Iterable[PackageEvent], config: LockerConfig,
                    start_day: int | None = None, end_day: int | None = None) -> LockerHistory:
        evs = [e for e in events if e.locker_id == config.locker_id]
        if start_day is None:
            start_day = min((e.day for e in evs), default=0)
        if end_day is None:
            end_day = max((e.day for e in evs), default=start_day)
        n = end_day - start_day + 1
        S = config.n_options
        deliveries = np.zeros((S, n))
        first_rej = np.ones((S, n))
        dwell = np.zeros((S, n, N_DWELL))
        requests: dict[str, PackageEvent] = {}
        delivered: dict[str, PackageEvent] = {}
        clamped = 0
        for e in evs:
            if e.kind is EventKind.Request:
                requests[e.order_id] = e
            elif e.kind is EventKind.Delivery:
                delivered[e.order_id] = e
                if start_day <= e.day <= end_day:
                    deliveries[e.ship_option - 1, e.day - start_day] += 1
        for e in evs:
            if e.kind in (EventKind.Pickup, EventKind.Return):
                d = delivered.get(e.order_id)
                if d is None or not start_day <= d.day <= end_day:
                    continue
                k = e.day - d.day
                if k > MAX_DWELL:
                    clamped += 1
                    k = MAX_DWELL
                dwell[e.ship_option - 1, d.day - start_day, max(k, 0)] += 1
        for oid, r in requests.items():
            if oid in delivered or not start_day <= r.day <= end_day:
                continue
            s, i = r.ship_option - 1, r.day - start_day
            first_rej[s, i] = min(first_rej[s, i], time_of_day_fraction(r.within_day_seq))
        return cls(config.locker_id, start_day, end_day, deliveries, first_rej, dwell, clamped)


@dataclass
class HomeDeliveries:
    """Weekly home-delivery counts keyed by (zip, ISO week label, ship option)."""

    counts: dict[tuple[str, str, int], float] = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, int, float]]) -> HomeDeliveries:
        out: dict[tuple[str, str, int], float] = defaultdict(float)
        for z, wk, s, c in records:
            out[(str(z), str(wk), int(s))] += float(c)
        return cls(dict(out))

    def records(self) -> list[tuple[str, str, int, float]]:
        return [(z, w, s, c) for (z, w, s), c in sorted(self.counts.items())]

    @staticmethod
    def last_year_week(d: _dt.date) -> str:
        y, w, _ = d.isocalendar()
        return f"{y - 1}-W{w:02d}"

    def last_year(self, zip_code: str, d: _dt.date, option: int) -> tuple[float, bool]:
        """Count for the same ISO week one year earlier, and whether it was missing."""
        key = (zip_code, self.last_year_week(d), option)
        if key in self.counts:
            return self.counts[key], False
        return 0.0, True

    def last_year_vector(self, zip_code: str, d: _dt.date, n_options: int) -> np.ndarray:
        return np.array([self.last_year(zip_code, d, s)[0] for s in range(1, n_options + 1)])


def same_weekday_days(target_day: int, known_through: int, n: int = 4) -> list[int]:
    """The ``n`` most recent days sharing ``target_day``'s weekday, before the target and on or before ``known_through``."""
    last = min(target_day - 7, known_through - ((known_through - target_day) % 7))
    return [last - 7 * k for k in range(n)]


def date_features(day: int, epoch: _dt.date = DEFAULT_EPOCH) -> tuple[int, int]:
    d = day_to_date(day, epoch)
    return d.weekday(), d.day


def histories_by_locker(events: Sequence[PackageEvent], configs: Mapping[str, LockerConfig],
                        start_day: int | None = None, end_day: int | None = None) -> dict[str, LockerHistory]:
    per: dict[str, list[PackageEvent]] = defaultdict(list)
    for e in events:
        per[e.locker_id].append(e)
    return {lid: LockerHistory.from_events(per.get(lid, []), cfg, start_day, end_day) for lid, cfg in configs.items()}
