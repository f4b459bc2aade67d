"""Seeded synthetic event streams standing in for production locker logs."""
from __future__ import annotations

import datetime as _dt
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_EPOCH,
    N_DWELL,
    RETURN_MIN_DWELL,
    ConfigError,
    EventKind,
    PackageEvent,
    day_to_date,
    sort_events,
)
from .dwell import check_pmf

DELIVERY_START = 8 * 3600     # deliveries land 08:00-12:00
PICKUP_START = 12 * 3600      # pickups and returns happen after noon
DAY_END = 24 * 3600


@dataclass(frozen=True)
class SyntheticWorkloadSpec:
    """Poisson delivery volumes per (locker, option, delivery day).

    ``rates`` is ``(S,)`` shared by all lockers or ``(lockers, S)``;
    ``weekly[dow]`` scales the rate by weekday; ``lead_pmfs[s, k]`` is the
    chance an order is placed ``k`` days before delivery.
    """

    rates: Sequence
    dwell_pmfs: Sequence
    lead_pmfs: Sequence
    first_day: int = 1
    n_days: int = 7
    lockers: int = 1
    weekly: tuple[float, ...] = (1.0,) * 7
    rng_seed: int = 0
    locker_prefix: str = "L"
    epoch: _dt.date = DEFAULT_EPOCH

    def arrays(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.ndim == 1:
            rates = np.repeat(rates[None, :], self.lockers, axis=0)
        dwell = np.asarray(self.dwell_pmfs, dtype=float)
        lead = np.asarray(self.lead_pmfs, dtype=float)
        weekly = np.asarray(self.weekly, dtype=float)
        S = rates.shape[1] if rates.ndim == 2 else 0
        if self.lockers < 0 or self.n_days < 0:
            raise ConfigError("lockers and n_days must be non-negative")
        if rates.shape != (self.lockers, S) or not np.isfinite(rates).all() or (rates < 0).any():
            raise ConfigError("rates must be finite, non-negative, shaped (S,) or (lockers, S)")
        if weekly.shape != (7,) or (weekly < 0).any():
            raise ConfigError("weekly multipliers must be 7 non-negative values")
        if dwell.shape != (S, N_DWELL):
            raise ConfigError(f"dwell pmfs must be {S} x {N_DWELL}")
        check_pmf(dwell)
        if lead.ndim != 2 or lead.shape[0] != S:
            raise ConfigError("lead-time pmfs need one row per option")
        if (lead < 0).any() or np.abs(lead.sum(axis=1) - 1.0).max() > 1e-9:
            raise ConfigError("lead-time pmfs must be non-negative and sum to 1")
        return rates, dwell, lead, weekly


def locker_ids(n: int, prefix: str = "L") -> list[str]:
    return [f"{prefix}{i:03d}" for i in range(n)]


def generate_locker_events(locker_id: str, expected, first_day: int, dwell_pmfs, lead_pmfs,
                           rng: np.random.Generator) -> list[PackageEvent]:
    """Events for one locker given expected deliveries ``(S, n_days)`` by delivery day.

    ``dwell_pmfs`` is ``(S, 7)`` or ``(S, n_days, 7)``. A package left three
    or more days is collected by the carrier (Return), otherwise picked up.
    """
    lam = np.asarray(expected, dtype=float)
    S, n_days = lam.shape
    q = np.asarray(dwell_pmfs, dtype=float)
    if q.ndim == 2:
        q = np.broadcast_to(q[:, None, :], (S, n_days, N_DWELL))
    lead = np.asarray(lead_pmfs, dtype=float)
    counts = rng.poisson(lam)
    out: list[PackageEvent] = []
    for i in range(n_days):
        v = first_day + i
        n_day = int(counts[:, i].sum())
        if n_day == 0:
            continue
        slots = np.sort(rng.choice(PICKUP_START - DELIVERY_START, size=n_day, replace=n_day > PICKUP_START - DELIVERY_START))
        j = 0
        for s in range(S):
            n = int(counts[s, i])
            if n == 0:
                continue
            leads = rng.choice(lead.shape[1], size=n, p=lead[s])
            dwells = rng.choice(N_DWELL, size=n, p=q[s, i])
            req_seq = rng.integers(0, DAY_END, size=n)
            term_seq = rng.integers(PICKUP_START, DAY_END, size=n)
            for k in range(n):
                oid = f"{locker_id}-{v}-{s + 1}-{k}"
                dseq = DELIVERY_START + int(slots[j])
                j += 1
                rseq = int(req_seq[k]) if leads[k] > 0 else int(req_seq[k]) % dseq
                out.append(PackageEvent(locker_id, oid, EventKind.Request, s + 1, v - int(leads[k]), rseq))
                out.append(PackageEvent(locker_id, oid, EventKind.Delivery, s + 1, v, dseq))
                kind = EventKind.Return if dwells[k] >= RETURN_MIN_DWELL else EventKind.Pickup
                out.append(PackageEvent(locker_id, oid, kind, s + 1, v + int(dwells[k]), int(term_seq[k])))
    return out


def generate_workload(spec: SyntheticWorkloadSpec) -> list[PackageEvent]:
    """Sorted event stream for every locker in ``spec``; deterministic per seed."""
    rates, dwell, lead, weekly = spec.arrays()
    days = np.arange(spec.first_day, spec.first_day + spec.n_days)
    season = np.array([weekly[day_to_date(int(d), spec.epoch).weekday()] for d in days])
    events: list[PackageEvent] = []
    for i, lid in enumerate(locker_ids(spec.lockers, spec.locker_prefix)):
        rng = np.random.default_rng([spec.rng_seed, i])
        lam = rates[i][:, None] * season[None, :]
        events.extend(generate_locker_events(lid, lam, spec.first_day, dwell, lead, rng))
    return sort_events(events)


def observed_log(events: Sequence[PackageEvent], rejected: set[str]) -> list[PackageEvent]:
    """What a production system would have logged: rejected orders keep only their Request."""
    return [e for e in events if e.order_id not in rejected or e.kind is EventKind.Request]
