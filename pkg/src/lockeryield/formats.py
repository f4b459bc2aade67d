"""Text file formats: event logs, home deliveries, locker tables, ship options, dwell truth."""
from __future__ import annotations

import csv
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_OPTIONS,
    N_DWELL,
    ConfigError,
    EventKind,
    InvalidEventError,
    LockerError,
    OrderRecord,
    PackageEvent,
    ShipOption,
    check_order,
    sort_events,
    validate_options,
)
from .history import HomeDeliveries

EVENT_HEADER = ["locker_id", "order_id", "kind", "ship_option", "day", "seq"]
HOME_HEADER = ["zip", "iso_week", "ship_option", "count"]
LOCKER_HEADER = ["locker_id", "zip", "capacity"]
OPTION_HEADER = ["id", "label", "speed_rank"]
PMF_HEADER = ["locker_id", "ship_option", *[f"q{k}" for k in range(N_DWELL)]]


class DataError(LockerError):
    """Malformed input data; ``diagnostics`` lists every problem found."""

    def __init__(self, message: str, diagnostics: Sequence[str] = ()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _open_rows(path, header: list[str]):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    fh = path.open(newline="")
    reader = csv.reader(fh)
    first = next(reader, None)
    if first is None or [c.strip() for c in first] != header:
        fh.close()
        raise DataError(f"{path}:1: header must be {','.join(header)}")
    return fh, reader


# --- events -----------------------------------------------------------------

def write_events(path, events: Iterable[PackageEvent]) -> int:
    n = 0
    with Path(path).open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(EVENT_HEADER)
        for e in events:
            w.writerow([e.locker_id, e.order_id, e.kind.value, e.ship_option, e.day, e.within_day_seq])
            n += 1
    return n


def parse_event(fields: list[str]) -> PackageEvent:
    if len(fields) != len(EVENT_HEADER):
        raise ValueError(f"expected {len(EVENT_HEADER)} fields, got {len(fields)}")
    locker, oid, kind, opt, day, seq = (f.strip() for f in fields)
    if not locker or not oid:
        raise ValueError("empty locker_id or order_id")
    try:
        k = EventKind(kind)
    except ValueError:
        raise ValueError(f"unknown kind {kind!r} (expected Request|Delivery|Pickup|Return)") from None
    seq_i = int(seq)
    if seq_i < 0:
        raise ValueError("seq must be non-negative")
    opt_i = int(opt)
    if opt_i < 1:
        raise ValueError("ship_option must be >= 1")
    return PackageEvent(locker, oid, k, opt_i, int(day), seq_i)


@dataclass
class IngestResult:
    events: list[PackageEvent]
    diagnostics: list[str] = field(default_factory=list)
    n_lines: int = 0
    n_dropped: int = 0


def ingest_events(path, *, n_options: int | None = None, skip_bad: bool = False) -> IngestResult:
    """Parse, validate and sort an event log.

    Every problem is reported as ``file:line: message``. Without
    ``skip_bad`` any problem raises DataError; with it, unparsable lines and
    duplicate records are dropped and orders breaking a lifecycle rule are
    dropped whole.
    """
    path = Path(path)
    fh, reader = _open_rows(path, EVENT_HEADER)
    diags: list[str] = []
    parsed: list[tuple[int, PackageEvent]] = []
    n_lines = 0
    with fh:
        for lineno, fields in enumerate(reader, start=2):
            if not fields or all(not f.strip() for f in fields):
                continue
            n_lines += 1
            try:
                ev = parse_event(fields)
                if n_options is not None and ev.ship_option > n_options:
                    raise ValueError(f"ship_option {ev.ship_option} outside 1..{n_options}")
            except ValueError as exc:
                diags.append(f"{path}:{lineno}: {exc}")
                continue
            parsed.append((lineno, ev))

    slot = {EventKind.Request: "request", EventKind.Delivery: "delivery",
            EventKind.Pickup: "terminal", EventKind.Return: "terminal"}
    records: dict[tuple[str, str], OrderRecord] = {}
    lines: dict[tuple[str, str], dict[str, int]] = {}
    kept: list[tuple[int, PackageEvent]] = []
    for lineno, ev in parsed:
        key = (ev.locker_id, ev.order_id)
        rec = records.setdefault(key, OrderRecord(ev.order_id, ev.ship_option))
        seen = lines.setdefault(key, {})
        name = slot[ev.kind]
        if rec.ship_option != ev.ship_option:
            diags.append(f"{path}:{lineno}: order {ev.order_id}: ship option {ev.ship_option} differs from "
                         f"earlier {rec.ship_option}; record rejected")
            continue
        if getattr(rec, name) is not None:
            diags.append(f"{path}:{lineno}: order {ev.order_id}: duplicate {ev.kind.value} "
                         f"(first on line {seen[name]}); record rejected")
            continue
        setattr(rec, name, ev)
        seen[name] = lineno
        kept.append((lineno, ev))
    bad: set[tuple[str, str]] = set()
    for key, rec in records.items():
        try:
            check_order(rec)
        except InvalidEventError as exc:
            where = ",".join(str(n) for n in sorted(lines[key].values()))
            diags.append(f"{path}:{where}: {exc}")
            bad.add(key)
    if diags and not skip_bad:
        raise DataError(f"{path}: {len(diags)} invalid record(s)", diags)
    events = sort_events(ev for _, ev in kept if (ev.locker_id, ev.order_id) not in bad)
    return IngestResult(events, diags, n_lines, n_lines - len(events))


def read_events(path, *, n_options: int | None = None) -> list[PackageEvent]:
    return ingest_events(path, n_options=n_options).events


# --- home deliveries --------------------------------------------------------

def write_home(path, home: HomeDeliveries) -> None:
    with Path(path).open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(HOME_HEADER)
        for z, wk, s, c in home.records():
            w.writerow([z, wk, s, repr(float(c)) if c != int(c) else int(c)])


def read_home(path) -> HomeDeliveries:
    fh, reader = _open_rows(path, HOME_HEADER)
    recs, diags = [], []
    with fh:
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            try:
                z, wk, s, c = (f.strip() for f in fields)
                if len(wk) != 8 or wk[4:6] != "-W":
                    raise ValueError(f"iso_week {wk!r} is not YYYY-Www")
                count = float(c)
                if count < 0:
                    raise ValueError("count must be non-negative")
                recs.append((z, wk, int(s), count))
            except ValueError as exc:
                diags.append(f"{path}:{lineno}: {exc}")
    if diags:
        raise DataError(f"{path}: {len(diags)} invalid record(s)", diags)
    return HomeDeliveries.from_records(recs)


# --- lockers and options -------------------------------------------------------

@dataclass(frozen=True)
class LockerRow:
    locker_id: str
    zip_code: str
    capacity: int


def write_lockers(path, rows: Iterable[LockerRow]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(LOCKER_HEADER)
        for r in rows:
            w.writerow([r.locker_id, r.zip_code, r.capacity])


def read_lockers(path) -> list[LockerRow]:
    fh, reader = _open_rows(path, LOCKER_HEADER)
    out = []
    with fh:
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            try:
                lid, z, cap = (f.strip() for f in fields)
                out.append(LockerRow(lid, z, int(cap)))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    bad = [r.locker_id for r in out if r.capacity < 1]
    if bad:
        raise ConfigError(f"{path}: capacity must be >= 1 for lockers {bad}")
    return out


def write_options(path, options: Sequence[ShipOption]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(OPTION_HEADER)
        for o in options:
            w.writerow([o.id, o.label, o.speed_rank])


def read_options(path) -> tuple[ShipOption, ...]:
    if path is None or not Path(path).exists():
        return DEFAULT_OPTIONS
    fh, reader = _open_rows(path, OPTION_HEADER)
    with fh:
        opts = tuple(ShipOption(int(i), label.strip(), int(r)) for i, label, r in (f for f in reader if f))
    validate_options(opts)
    return opts


def write_pmfs(path, pmfs: dict[str, np.ndarray]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = _writer(fh)
        w.writerow(PMF_HEADER)
        for lid, q in sorted(pmfs.items()):
            for s, row in enumerate(np.asarray(q)):
                w.writerow([lid, s + 1, *(repr(float(x)) for x in row)])


def read_pmfs(path) -> dict[str, np.ndarray]:
    fh, reader = _open_rows(path, PMF_HEADER)
    rows: dict[str, dict[int, list[float]]] = {}
    with fh:
        for fields in reader:
            if fields:
                rows.setdefault(fields[0], {})[int(fields[1])] = [float(x) for x in fields[2:]]
    return {lid: np.array([r[s] for s in sorted(r)]) for lid, r in rows.items()}
