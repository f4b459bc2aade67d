"""Synthetic multi-locker benchmark: demand traces, a legacy production log and home-delivery counts."""
from __future__ import annotations

import datetime as _dt
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_EPOCH,
    DEFAULT_OPTIONS,
    N_DWELL,
    ConfigError,
    EventKind,
    LockerConfig,
    PackageEvent,
    ShipOption,
    day_to_date,
    sort_events,
)
from .dwell import check_pmf, survival
from .formats import (
    LockerRow,
    write_events,
    write_home,
    write_lockers,
    write_options,
    write_pmfs,
)
from .history import HomeDeliveries
from .simulate import AdmissionPolicy, replay
from .workload import generate_locker_events, observed_log

MANIFEST = "manifest.json"

# fast options mostly leave within a day; returns sit until the carrier comes
BENCH_DWELL = (
    (0.50, 0.32, 0.10, 0.04, 0.02, 0.01, 0.01),
    (0.32, 0.33, 0.18, 0.08, 0.05, 0.03, 0.01),
    (0.10, 0.18, 0.24, 0.20, 0.14, 0.08, 0.06),
    (0.05, 0.10, 0.15, 0.25, 0.20, 0.15, 0.10),
)
# slower options are ordered further ahead of delivery
BENCH_LEAD = (
    (0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    (0.0, 0.3, 0.7, 0.0, 0.0, 0.0, 0.0),
    (0.0, 0.0, 0.0, 0.2, 0.3, 0.3, 0.2),
    (0.0, 0.0, 0.1, 0.3, 0.3, 0.2, 0.1),
)
BENCH_WEEKLY = (1.10, 1.05, 1.00, 1.00, 1.15, 0.85, 0.85)


@dataclass(frozen=True)
class Tier:
    name: str
    load: float               # expected occupancy / capacity if every request were accepted
    capacity: tuple[int, int]


DEFAULT_TIERS = (
    Tier("low", 0.25, (40, 60)),
    Tier("medium", 0.8, (30, 50)),
    Tier("high", 1.6, (30, 50)),
)


@dataclass
class BenchSpec:
    n_lockers: int = 30
    n_zips: int = 6
    tiers: tuple[Tier, ...] = DEFAULT_TIERS
    history_start: int = -150
    window: tuple[int, int] = (1, 15)
    seed: int = 1
    locker_mix: tuple[float, ...] = (0.35, 0.30, 0.20, 0.15)
    home_mix: tuple[float, ...] = (0.20, 0.30, 0.35, 0.15)
    mix_concentration: float = 200.0
    home_weekly_volume: float = 3000.0
    seasonal_amplitude: float = 0.15
    seasonal_period: float = 91.0
    dwell_pmfs: tuple[tuple[float, ...], ...] = BENCH_DWELL
    lead_pmfs: tuple[tuple[float, ...], ...] = BENCH_LEAD
    weekly: tuple[float, ...] = BENCH_WEEKLY
    options: tuple[ShipOption, ...] = DEFAULT_OPTIONS
    epoch: _dt.date = DEFAULT_EPOCH

    def validate(self) -> None:
        S = len(self.options)
        if self.n_lockers < 0 or self.n_zips < 1 or not self.tiers:
            raise ConfigError("need n_lockers >= 0, n_zips >= 1 and at least one tier")
        if self.window[0] > self.window[1] or self.history_start + 35 > self.window[0]:
            raise ConfigError("history must start at least five weeks before the window")
        for name, mix in (("locker_mix", self.locker_mix), ("home_mix", self.home_mix)):
            if len(mix) != S or min(mix) <= 0:
                raise ConfigError(f"{name} needs {S} positive entries")
        check_pmf(np.asarray(self.dwell_pmfs, dtype=float))
        lead = np.asarray(self.lead_pmfs, dtype=float)
        if lead.shape[0] != S or (lead < 0).any() or np.abs(lead.sum(axis=1) - 1).max() > 1e-9:
            raise ConfigError("lead_pmfs need one pmf per option")
        if lead.shape[1] > N_DWELL:
            raise ConfigError("lead times beyond six days fall outside a weekly plan")
        for t in self.tiers:
            if t.load < 0 or t.capacity[0] < 1 or t.capacity[1] < t.capacity[0]:
                raise ConfigError(f"invalid tier {t}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epoch"] = self.epoch.isoformat()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BenchSpec:
        d = dict(d)
        if "tiers" in d:
            d["tiers"] = tuple(Tier(t["name"], float(t["load"]), tuple(t["capacity"])) for t in d["tiers"])
        if "options" in d:
            d["options"] = tuple(ShipOption(**o) for o in d["options"])
        if "epoch" in d:
            d["epoch"] = _dt.date.fromisoformat(d["epoch"])
        for k in ("window", "locker_mix", "home_mix", "weekly"):
            if k in d:
                d[k] = tuple(d[k])
        for k in ("dwell_pmfs", "lead_pmfs"):
            if k in d:
                d[k] = tuple(tuple(r) for r in d[k])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown benchmark settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class BenchLocker:
    row: LockerRow
    tier: str
    mix: np.ndarray
    rates: np.ndarray           # expected deliveries (S, n_days)


@dataclass
class BenchWorld:
    spec: BenchSpec
    lockers: list[BenchLocker]
    home: HomeDeliveries
    trace: dict[str, list[PackageEvent]]        # every request, all delivered
    production: dict[str, list[PackageEvent]]   # legacy-policy log
    first_day: int
    last_day: int

    def config(self, locker_id: str) -> LockerConfig:
        row = next(b.row for b in self.lockers if b.row.locker_id == locker_id)
        return LockerConfig(row.locker_id, row.capacity, self.spec.options)


def _season(day: int, spec: BenchSpec) -> float:
    return 1.0 + spec.seasonal_amplitude * math.sin(2 * math.pi * day / spec.seasonal_period)


def tier_of(i: int, n: int, tiers) -> int:
    """Lockers are split into contiguous, equally sized tiers."""
    return min(len(tiers) - 1, i * len(tiers) // max(n, 1))


def home_records(spec: BenchSpec, zip_mix: dict[str, np.ndarray], first_day: int, last_day: int,
                 rng: np.random.Generator) -> HomeDeliveries:
    """Last-year weekly home deliveries for every week the forecast can ask about."""
    weeks: dict[str, int] = {}
    for day in range(first_day - 35, last_day + 8):
        label = HomeDeliveries.last_year_week(day_to_date(day, spec.epoch))
        weeks.setdefault(label, day)
    recs = []
    for z in sorted(zip_mix):
        for label, day in sorted(weeks.items()):
            lam = spec.home_weekly_volume * _season(day, spec) * zip_mix[z]
            for s, c in enumerate(rng.poisson(lam)):
                recs.append((z, label, s + 1, float(c)))
    return HomeDeliveries.from_records(recs)


def proportion_policy(home: HomeDeliveries, zip_code: str, capacity: int, options, surv, epoch) -> AdmissionPolicy:
    """Legacy rule: slots split by last year's home-delivery mix for the delivery week."""
    from .forecast import proportion_rule_forecast

    S = len(options)
    cache: dict[str, np.ndarray] = {}

    def shares(day: int) -> np.ndarray:
        d = day_to_date(day, epoch)
        key = HomeDeliveries.last_year_week(d)
        if key not in cache:
            cache[key] = proportion_rule_forecast(home.last_year_vector(zip_code, d, S), capacity)
        return cache[key]

    return AdmissionPolicy.proportion(shares, surv, name="ProportionRule")


def build_world(spec: BenchSpec) -> BenchWorld:
    spec.validate()
    S = len(spec.options)
    first_day = spec.history_start
    last_day = spec.window[1] + N_DWELL - 1
    n_days = last_day - first_day + 1
    master = np.random.default_rng([spec.seed, 0])
    zips = [f"Z{k:02d}" for k in range(spec.n_zips)]
    home_base = np.asarray(spec.home_mix) / sum(spec.home_mix)
    zip_mix = {z: master.dirichlet(spec.mix_concentration * home_base) for z in zips}
    home = home_records(spec, zip_mix, first_day, last_day, master)
    dwell = np.asarray(spec.dwell_pmfs, dtype=float)
    residence = dwell @ np.arange(N_DWELL) + 1.0
    mix_base = np.asarray(spec.locker_mix) / sum(spec.locker_mix)
    days = np.arange(first_day, last_day + 1)
    season = np.array([spec.weekly[day_to_date(int(d), spec.epoch).weekday()] * _season(int(d), spec) for d in days])
    lockers, trace, production = [], {}, {}
    surv = survival(dwell)
    for i in range(spec.n_lockers):
        rng = np.random.default_rng([spec.seed, 1, i])
        tier = spec.tiers[tier_of(i, spec.n_lockers, spec.tiers)]
        cap = int(rng.integers(tier.capacity[0], tier.capacity[1] + 1))
        mix = rng.dirichlet(spec.mix_concentration * mix_base)
        per_day = tier.load * cap / float(mix @ residence)
        rates = per_day * mix[:, None] * season[None, :]
        row = LockerRow(f"L{i:03d}", zips[i % len(zips)], cap)
        events = sort_events(generate_locker_events(row.locker_id, rates, first_day, dwell, spec.lead_pmfs, rng))
        cfg = LockerConfig(row.locker_id, cap, spec.options)
        legacy = proportion_policy(home, row.zip_code, cap, spec.options, surv, spec.epoch)
        report = replay(events, legacy, cfg)
        rejected = {d.order_id for d in report.decisions if d.decision.value == "Reject"}
        rejected |= set(report.door_failed_orders)
        lockers.append(BenchLocker(row, tier.name, mix, rates))
        trace[row.locker_id] = events
        production[row.locker_id] = observed_log(events, rejected)
    return BenchWorld(spec, lockers, home, trace, production, first_day, last_day)


def write_world(world: BenchWorld, out: Path) -> dict:
    """Materialise the benchmark; returns the manifest."""
    out = Path(out)
    (out / "events").mkdir(parents=True, exist_ok=True)
    (out / "history").mkdir(parents=True, exist_ok=True)
    write_lockers(out / "lockers.csv", [b.row for b in world.lockers])
    write_options(out / "options.csv", world.spec.options)
    write_home(out / "home.csv", world.home)
    dwell = np.asarray(world.spec.dwell_pmfs, dtype=float)
    write_pmfs(out / "dwell_truth.csv", {b.row.locker_id: dwell for b in world.lockers})
    entries = []
    for b in world.lockers:
        lid = b.row.locker_id
        n_trace = write_events(out / "events" / f"{lid}.csv", world.trace[lid])
        n_hist = write_events(out / "history" / f"{lid}.csv", world.production[lid])
        entries.append({"locker_id": lid, "zip": b.row.zip_code, "capacity": b.row.capacity, "tier": b.tier,
                        "events": f"events/{lid}.csv", "history": f"history/{lid}.csv",
                        "n_trace_events": n_trace, "n_history_events": n_hist})
    manifest = {"format": "lockeryield.bench", "version": 1, "spec": world.spec.to_dict(),
                "first_day": world.first_day, "last_day": world.last_day, "lockers": entries}
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def tier_table(manifest: dict) -> dict[str, str]:
    return {e["locker_id"]: e["tier"] for e in manifest.get("lockers", [])}


def demand_by_day(events, n_options: int, first_day: int, last_day: int) -> np.ndarray:
    """Delivery counts ``(S, days)`` of a trace, indexed from ``first_day``."""
    out = np.zeros((n_options, last_day - first_day + 1))
    for e in events:
        if e.kind is EventKind.Delivery and first_day <= e.day <= last_day:
            out[e.ship_option - 1, e.day - first_day] += 1
    return out


def zip_groups(rows) -> dict[str, list[str]]:
    out: dict[str, list[str]] = defaultdict(list)
    for r in rows:
        out[r.zip_code].append(r.locker_id)
    return dict(out)
