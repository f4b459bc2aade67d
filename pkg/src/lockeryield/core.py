"""Domain types and shared conventions.

Days are whole integers. Day 0 is the planning day ("today"), horizon days
are 1..T and history days are negative. ``within_day_seq`` orders events
inside a day and is read as seconds since the start of the locker's
operational day wherever a time-of-day is needed.
"""
from __future__ import annotations

import datetime as _dt
import enum
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

MAX_DWELL = 6
N_DWELL = MAX_DWELL + 1
RETURN_MIN_DWELL = 3
DAY_SECONDS = 86_400
DEFAULT_EPOCH = _dt.date(2019, 6, 1)


class LockerError(Exception):
    """Base class for all package errors."""


class InvalidEventError(LockerError):
    pass


class OrderingError(LockerError):
    pass


class ConfigError(LockerError):
    pass


class EventKind(enum.Enum):
    Request = "Request"
    Delivery = "Delivery"
    Pickup = "Pickup"
    Return = "Return"


# tie-break inside an identical (day, seq) so sorted output is reproducible
_KIND_ORDER = {EventKind.Request: 0, EventKind.Delivery: 1, EventKind.Pickup: 2, EventKind.Return: 3}


@dataclass(frozen=True)
class ShipOption:
    id: int
    label: str
    speed_rank: int


@dataclass(frozen=True)
class LockerConfig:
    locker_id: str
    capacity: int
    ship_options: tuple[ShipOption, ...]
    horizon_days: int = 7

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError(f"locker {self.locker_id}: capacity must be >= 1, got {self.capacity}")
        if self.horizon_days < 1:
            raise ConfigError(f"locker {self.locker_id}: horizon_days must be >= 1")
        if not self.ship_options:
            raise ConfigError(f"locker {self.locker_id}: at least one ship option required")
        validate_options(self.ship_options)
        object.__setattr__(self, "ship_options", tuple(self.ship_options))

    @property
    def n_options(self) -> int:
        return len(self.ship_options)

    def option_index(self, option_id: int) -> int:
        """Zero-based row index of a ship option id."""
        if not 1 <= option_id <= self.n_options:
            raise InvalidEventError(f"unknown ship option {option_id} for locker {self.locker_id}")
        return option_id - 1


def validate_options(options: Sequence[ShipOption]) -> None:
    ids = [o.id for o in options]
    if ids != list(range(1, len(options) + 1)):
        raise ConfigError(f"ship option ids must be contiguous from 1 in order, got {ids}")
    labels = [o.label for o in options]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate ship option labels: {labels}")
    ranks = [o.speed_rank for o in options]
    if len(set(ranks)) != len(ranks):
        raise ConfigError(f"speed ranks must be distinct, got {ranks}")


DEFAULT_OPTIONS = (
    ShipOption(1, "next-day", 1),
    ShipOption(2, "two-day", 2),
    ShipOption(3, "standard", 3),
    ShipOption(4, "return", 4),
)


@dataclass(frozen=True, order=True)
class PackageEvent:
    locker_id: str
    order_id: str
    kind: EventKind
    ship_option: int
    day: int
    within_day_seq: int = 0

    def sort_key(self):
        return (self.day, self.within_day_seq, _KIND_ORDER[self.kind], self.order_id)


def sort_events(events: Iterable[PackageEvent]) -> list[PackageEvent]:
    return sorted(events, key=PackageEvent.sort_key)


def check_sorted(events: Sequence[PackageEvent]) -> None:
    prev = None
    for i, ev in enumerate(events):
        key = (ev.day, ev.within_day_seq)
        if prev is not None and key < prev:
            raise OrderingError(
                f"event {i} (order {ev.order_id}, {ev.kind.value}, day {ev.day}, seq {ev.within_day_seq}) "
                f"is out of (day, seq) order"
            )
        prev = key


@dataclass(frozen=True)
class Carryover:
    """Packages still in the locker at the end of the planning day.

    ``counts[s, k]`` holds option ``s`` (zero-based) delivered on relative
    day ``k - 6``; column 6 is the planning day itself.
    """

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.ndim != 2 or c.shape[1] != N_DWELL:
            raise ConfigError(f"carryover must be S x {N_DWELL}, got shape {c.shape}")
        if (c < 0).any():
            raise ConfigError("carryover counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @classmethod
    def zeros(cls, n_options: int) -> Carryover:
        return cls(np.zeros((n_options, N_DWELL)))

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def at(self, option_id: int, rel_day: int) -> float:
        return float(self.counts[option_id - 1, rel_day + MAX_DWELL])


@dataclass(frozen=True)
class OccupancySnapshot:
    day: int
    per_option_counts: tuple[int, ...]
    total: int = field(default=-1)

    def __post_init__(self):
        t = sum(self.per_option_counts)
        if self.total == -1:
            object.__setattr__(self, "total", t)
        elif self.total != t:
            raise LockerError(f"snapshot total {self.total} != sum of per-option counts {t}")


def dwell_days(delivery_day: int, terminal_day: int) -> int:
    """Whole days between delivery and pickup/return; same-day pickup is 0."""
    diff = terminal_day - delivery_day
    if diff < 0:
        raise InvalidEventError(f"terminal day {terminal_day} precedes delivery day {delivery_day}")
    return diff


def capacity_normalized_error(actual, predicted, capacity):
    """``|actual - predicted| / capacity``; broadcasts over arrays."""
    cap = np.asarray(capacity, dtype=float)
    if np.any(cap <= 0):
        raise ConfigError("capacity must be positive")
    a = np.asarray(actual, dtype=float)
    p = np.asarray(predicted, dtype=float)
    if np.any(a < 0) or np.any(p < 0):
        raise ValueError("counts must be non-negative")
    err = np.abs(a - p) / cap
    return float(err) if err.ndim == 0 else err


def mean_capacity_normalized_error(actual, predicted, capacity) -> float:
    """Unweighted mean of the per-cell error over every cell given."""
    err = np.atleast_1d(capacity_normalized_error(actual, predicted, capacity))
    if err.size == 0:
        raise ValueError("no cells to average")
    return float(err.mean())


def time_of_day_fraction(seq: int) -> float:
    return min(max(seq, 0), DAY_SECONDS) / DAY_SECONDS


def day_to_date(day: int, epoch: _dt.date = DEFAULT_EPOCH) -> _dt.date:
    return epoch + _dt.timedelta(days=int(day))


def iso_week_label(d: _dt.date) -> str:
    y, w, _ = d.isocalendar()
    return f"{y}-W{w:02d}"


# --- event-stream validation -------------------------------------------------

@dataclass
class OrderRecord:
    """Lifecycle of one order assembled from its events."""

    order_id: str
    ship_option: int
    request: PackageEvent | None = None
    delivery: PackageEvent | None = None
    terminal: PackageEvent | None = None

    @property
    def dwell(self) -> int | None:
        if self.delivery is None or self.terminal is None:
            return None
        return self.terminal.day - self.delivery.day


def collect_orders(events: Iterable[PackageEvent]) -> dict[str, OrderRecord]:
    """Group events by order and check the per-order invariants.

    Raises InvalidEventError naming the first offending order.
    """
    orders: dict[str, OrderRecord] = {}
    for ev in events:
        rec = orders.get(ev.order_id)
        if rec is None:
            rec = orders[ev.order_id] = OrderRecord(ev.order_id, ev.ship_option)
        elif rec.ship_option != ev.ship_option:
            raise InvalidEventError(f"order {ev.order_id}: ship option changes between events")
        if ev.kind is EventKind.Request:
            slot = "request"
        elif ev.kind is EventKind.Delivery:
            slot = "delivery"
        else:
            slot = "terminal"
        if getattr(rec, slot) is not None:
            raise InvalidEventError(f"order {ev.order_id}: duplicate {ev.kind.value} event")
        setattr(rec, slot, ev)
    for rec in orders.values():
        check_order(rec)
    return orders


def check_order(rec: OrderRecord) -> None:
    oid = rec.order_id
    if rec.request and rec.delivery and rec.delivery.day < rec.request.day:
        raise InvalidEventError(f"order {oid}: Delivery on day {rec.delivery.day} before Request on day {rec.request.day}")
    if rec.terminal is not None:
        if rec.delivery is None:
            raise InvalidEventError(f"order {oid}: {rec.terminal.kind.value} without Delivery")
        gap = rec.terminal.day - rec.delivery.day
        if gap < 0 or (gap == 0 and rec.terminal.within_day_seq < rec.delivery.within_day_seq):
            raise InvalidEventError(f"order {oid}: {rec.terminal.kind.value} before Delivery")
        lo = RETURN_MIN_DWELL if rec.terminal.kind is EventKind.Return else 0
        if not lo <= gap <= MAX_DWELL:
            raise InvalidEventError(f"order {oid}: {rec.terminal.kind.value} dwell {gap} outside [{lo}, {MAX_DWELL}]")


def extract_carryover(events: Sequence[PackageEvent], as_of_day: int, config: LockerConfig) -> Carryover:
    """Count packages delivered in the last seven days still present at end of ``as_of_day``."""
    check_sorted(events)
    counts = np.zeros((config.n_options, N_DWELL))
    present: dict[str, tuple[int, int]] = {}
    delivered: set[str] = set()
    for ev in events:
        if ev.day > as_of_day:
            break
        if ev.locker_id != config.locker_id:
            continue
        if ev.kind is EventKind.Delivery:
            present[ev.order_id] = (config.option_index(ev.ship_option), ev.day)
            delivered.add(ev.order_id)
        elif ev.kind in (EventKind.Pickup, EventKind.Return):
            if ev.order_id not in delivered:
                raise InvalidEventError(f"order {ev.order_id}: {ev.kind.value} without Delivery")
            present.pop(ev.order_id, None)
    for s, v in present.values():
        rel = v - as_of_day
        if rel >= -MAX_DWELL:
            counts[s, rel + MAX_DWELL] += 1
    return Carryover(counts)
