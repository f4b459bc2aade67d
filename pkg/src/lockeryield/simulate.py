"""Deterministic replay of locker requests under an admission policy.

Occupancy is tracked at day granularity: a package holds a slot on every day
from its delivery day through its pickup/return day inclusive, so a same-day
pickup still uses a slot on the delivery day. Admission decisions use the
*expected* occupancy of the delivery day; physical capacity is enforced again
when a package arrives, and an accepted package that finds the locker full is
counted as a door failure rather than delivered.
"""
from __future__ import annotations

import csv
import enum
import logging
import time
from collections import Counter, defaultdict
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    MAX_DWELL,
    N_DWELL,
    Carryover,
    EventKind,
    InvalidEventError,
    LockerConfig,
    LockerError,
    OrderingError,
    PackageEvent,
    check_sorted,
    collect_orders,
)
from .dwell import survival

log = logging.getLogger(__name__)

EPS = 1e-9


class ReplayError(LockerError):
    pass


class PolicyKind(enum.Enum):
    FCFS = "FCFS"
    ProportionRule = "ProportionRule"
    Reservation = "Reservation"


class Decision(enum.Enum):
    Accept = "Accept"
    Reject = "Reject"


class Reason(enum.Enum):
    CapacityFull = "CapacityFull"
    LimitExhausted = "LimitExhausted"
    Accepted = "Accepted"


@dataclass(frozen=True)
class Request:
    order_id: str
    ship_option: int
    day: int
    delivery_day: int
    seq: int = 0


@dataclass(frozen=True)
class DecisionRecord:
    order_id: str
    day: int
    ship_option: int
    decision: Decision
    reason: Reason
    hindsight_space_available: bool = False
    delivery_day: int = 0
    rule: str = ""

    def __post_init__(self):
        if (self.decision is Decision.Accept) != (self.reason is Reason.Accepted):
            raise ValueError(f"reason {self.reason.value} inconsistent with decision {self.decision.value}")


def accept(req: Request, rule: str) -> DecisionRecord:
    return DecisionRecord(req.order_id, req.day, req.ship_option, Decision.Accept, Reason.Accepted,
                          delivery_day=req.delivery_day, rule=rule)


def reject(req: Request, reason: Reason, rule: str) -> DecisionRecord:
    return DecisionRecord(req.order_id, req.day, req.ship_option, Decision.Reject, reason,
                          delivery_day=req.delivery_day, rule=rule)


def lag_presence(pmfs) -> np.ndarray:
    """Presence-by-lag curves ``(S, 7)`` from per-option dwell pmfs."""
    return survival(np.asarray([getattr(p, "probs", p) for p in pmfs], dtype=float))


class LockerState:
    """Occupants, accepted-but-undelivered packages and the expected-occupancy projection."""

    def __init__(self, config: LockerConfig, presence_by_lag, safety_margin: float = 0.0):
        self.config = config
        self.capacity = config.capacity
        self.surv = np.asarray(presence_by_lag, dtype=float)
        if self.surv.shape != (config.n_options, N_DWELL):
            raise ReplayError(f"presence curves must be {config.n_options} x {N_DWELL}")
        if not 0.0 <= safety_margin <= 1.0:
            raise ReplayError("safety margin must lie in [0, 1]")
        self.margin = safety_margin
        self.day: int | None = None
        self.occupants: dict[str, list] = {}         # oid -> [s, delivery_day, terminal_day | None]
        self.pending: dict[str, tuple[int, int]] = {}  # oid -> (s, delivery_day)
        self.accepted: Counter = Counter()            # (option id, delivery day) -> accepted count
        self.requested: Counter = Counter()           # same key, every request seen
        self.proj: dict[int, np.ndarray] = defaultdict(lambda: np.zeros(config.n_options))
        self._contrib: dict[str, tuple[int, int, np.ndarray]] = {}

    # projection bookkeeping
    def _add(self, oid: str, s: int, first: int, vals: np.ndarray) -> None:
        for k, v in enumerate(vals):
            if v:
                self.proj[first + k][s] += v
        self._contrib[oid] = (s, first, vals)

    def _drop(self, oid: str, from_day: int) -> None:
        s, first, vals = self._contrib.pop(oid)
        keep = vals.copy()
        for k, v in enumerate(vals):
            if first + k >= from_day and v:
                self.proj[first + k][s] -= v
                keep[k] = 0.0
        if keep.any():
            self._contrib[oid] = (s, first, keep)

    def start_day(self, day: int) -> None:
        self.day = day
        for oid in [o for o, (_, _, term) in self.occupants.items() if term is not None and term < day]:
            del self.occupants[oid]
            self._contrib.pop(oid, None)
        self.proj.clear()
        self._contrib.clear()
        for oid, (s, v, _) in self.occupants.items():
            lag0 = day - v
            if lag0 > MAX_DWELL or self.surv[s, lag0] <= 0:
                vals = np.array([1.0])
            else:
                vals = self.surv[s, lag0:] / self.surv[s, lag0]
            self._add(oid, s, day, vals)
        for oid, (s, v) in self.pending.items():
            self._add(oid, s, v, self.surv[s].copy())

    def projected_total(self, day: int) -> float:
        return float(self.proj[day].sum()) if day in self.proj else 0.0

    def projected_option(self, s: int, day: int) -> float:
        return float(self.proj[day][s]) if day in self.proj else 0.0

    def fits(self, day: int, extra: float = 1.0) -> bool:
        return self.projected_total(day) + extra <= self.capacity - self.margin * self.capacity + EPS

    # lifecycle
    def accept(self, req: Request) -> None:
        s = req.ship_option - 1
        self.pending[req.order_id] = (s, req.delivery_day)
        self.accepted[(req.ship_option, req.delivery_day)] += 1
        self._add(req.order_id, s, req.delivery_day, self.surv[s].copy())

    def deliver(self, oid: str, day: int) -> bool:
        """Place an accepted package; False when the locker is physically full."""
        s, _ = self.pending.pop(oid)
        if len(self.occupants) + 1 > self.capacity:
            self._drop(oid, -10**9)
            return False
        self.occupants[oid] = [s, day, None]
        return True

    def place_unmanaged(self, oid: str, s: int, day: int) -> bool:
        if len(self.occupants) + 1 > self.capacity:
            return False
        self.occupants[oid] = [s, day, None]
        self._add(oid, s, day, self.surv[s].copy())
        return True

    def depart(self, oid: str, day: int) -> None:
        occ = self.occupants.get(oid)
        if occ is None:
            return
        occ[2] = day
        if oid in self._contrib:
            self._drop(oid, day + 1)

    def carryover(self, as_of: int) -> Carryover:
        counts = np.zeros((self.config.n_options, N_DWELL))
        for s, v, term in self.occupants.values():
            if (term is None or term > as_of) and as_of - MAX_DWELL <= v <= as_of:
                counts[s, v - as_of + MAX_DWELL] += 1
        return Carryover(counts)

    def snapshot_total(self) -> int:
        return len(self.occupants)


# --- policies ----------------------------------------------------------------

# expected requests still to arrive for (option id, delivery day) as of today
ToCome = Callable[[int, int, int], float]


def fcfs_decide(state: LockerState, req: Request, rule: str = "fcfs") -> DecisionRecord:
    if req.delivery_day < (state.day if state.day is not None else req.day):
        raise ReplayError(f"order {req.order_id}: delivery day precedes the current day")
    if state.fits(req.delivery_day):
        return accept(req, rule)
    return reject(req, Reason.CapacityFull, rule)


def protected_load(state: LockerState, limits: Mapping[tuple[int, int], int], day: int,
                   faster_than: int | None = None, to_come: ToCome | None = None) -> float:
    """Expected occupancy on ``day`` if the outstanding booking limits were filled.

    With ``faster_than`` only options of a strictly lower speed rank count.
    ``to_come(option_id, delivery_day, today)`` caps each remaining limit at
    the demand still expected to arrive.
    """
    today = state.day if state.day is not None else day
    opts = state.config.ship_options
    total = 0.0
    for v in range(max(day - MAX_DWELL, today), day + 1):
        for s in range(state.config.n_options):
            if faster_than is not None and opts[s].speed_rank >= faster_than:
                continue
            lim = limits.get((s + 1, v))
            if lim is None:
                continue
            left = lim - state.accepted[(s + 1, v)]
            if left > 0 and to_come is not None:
                left = min(left, to_come(s + 1, v, today))
            if left > 0:
                total += left * state.surv[s, day - v]
    return total


def reservation_decide(state: LockerState, req: Request, limits: Mapping[tuple[int, int], int],
                       nested: bool = False, to_come: ToCome | None = None) -> DecisionRecord:
    """Booking-limit admission.

    With ``nested`` a request over its own limit may still take capacity that
    is not held for the outstanding limits of faster options, checked on every
    day the package could occupy.
    """
    key = (req.ship_option, req.delivery_day)
    if key not in limits:
        return fcfs_decide(state, req, rule="fcfs-outside-plan")
    if not state.fits(req.delivery_day):
        return reject(req, Reason.CapacityFull, "limit")
    if state.accepted[key] + 1 <= limits[key]:
        return accept(req, "limit")
    if nested:
        s = req.ship_option - 1
        rank = state.config.ship_options[s].speed_rank
        cap = state.capacity - state.margin * state.capacity + EPS
        ok = all(
            state.projected_total(d) + state.surv[s, d - req.delivery_day] + protected_load(state, limits, d, rank, to_come) <= cap
            for d in range(req.delivery_day, req.delivery_day + N_DWELL)
            if state.surv[s, d - req.delivery_day] > 0
        )
        if ok:
            return accept(req, "nested")
    return reject(req, Reason.LimitExhausted, "limit")


def proportion_decide(state: LockerState, req: Request, shares) -> DecisionRecord:
    if not state.fits(req.delivery_day):
        return reject(req, Reason.CapacityFull, "share")
    s = req.ship_option - 1
    if state.projected_option(s, req.delivery_day) + 1 <= float(shares[s]) + EPS:
        return accept(req, "share")
    return reject(req, Reason.LimitExhausted, "share")


# called at the start of each re-solve day with (plan day, live state); the
# state's carryover(plan_day) and accepted ledger describe the plan-day close
Planner = Callable[[int, "LockerState"], Mapping[tuple[int, int], int]]


@dataclass
class AdmissionPolicy:
    kind: PolicyKind
    presence_by_lag: np.ndarray
    shares: np.ndarray | Callable[[int], np.ndarray] | None = None
    limits: Mapping[tuple[int, int], int] | None = None
    planner: Planner | None = None
    safety_margin: float = 0.0
    nested: bool = False
    to_come: ToCome | None = None
    name: str = ""

    def __post_init__(self):
        self.presence_by_lag = np.asarray(self.presence_by_lag, dtype=float)
        if self.kind is PolicyKind.ProportionRule and self.shares is None:
            raise ReplayError("proportion policy needs shares")
        if self.kind is PolicyKind.Reservation and self.limits is None and self.planner is None:
            raise ReplayError("reservation policy needs booking limits or a planner")
        if not self.name:
            self.name = self.kind.value

    @classmethod
    def fcfs(cls, presence_by_lag, **kw) -> AdmissionPolicy:
        return cls(PolicyKind.FCFS, presence_by_lag, **kw)

    @classmethod
    def proportion(cls, shares, presence_by_lag, **kw) -> AdmissionPolicy:
        return cls(PolicyKind.ProportionRule, presence_by_lag, shares=shares, **kw)

    @classmethod
    def reservation(cls, presence_by_lag, limits=None, planner=None, **kw) -> AdmissionPolicy:
        return cls(PolicyKind.Reservation, presence_by_lag, limits=limits, planner=planner, **kw)

    def shares_for(self, day: int) -> np.ndarray:
        return np.asarray(self.shares(day) if callable(self.shares) else self.shares, dtype=float)

    def decide(self, state: LockerState, req: Request, limits) -> DecisionRecord:
        if self.kind is PolicyKind.FCFS:
            return fcfs_decide(state, req)
        if self.kind is PolicyKind.ProportionRule:
            return proportion_decide(state, req, self.shares_for(req.delivery_day))
        return reservation_decide(state, req, limits, self.nested, self.to_come)


# --- replay ------------------------------------------------------------------

@dataclass(frozen=True)
class SimulationReport:
    locker_id: str
    policy: str
    window: tuple[int, int]
    requests: int = 0
    accepted: int = 0
    rejected: int = 0
    throughput: int = 0
    edge_accepted: int = 0
    door_failures: int = 0
    unjustified_rejections: int = 0
    throughput_by_option: tuple[int, ...] = ()
    rejections_by_reason: tuple[tuple[str, int], ...] = ()
    max_occupancy: int = 0
    decisions: tuple[DecisionRecord, ...] = ()
    door_failed_orders: tuple[str, ...] = ()
    agreement: float | None = None
    runtime_s: float = field(default=0.0, compare=False)

    def summary(self) -> dict:
        return {
            "locker_id": self.locker_id,
            "policy": self.policy,
            "window": list(self.window),
            "requests": self.requests,
            "accepted": self.accepted,
            "rejected": self.rejected,
            "throughput": self.throughput,
            "edge_accepted": self.edge_accepted,
            "door_failures": self.door_failures,
            "unjustified_rejections": self.unjustified_rejections,
            "throughput_by_option": list(self.throughput_by_option),
            "rejections_by_reason": dict(self.rejections_by_reason),
            "max_occupancy": self.max_occupancy,
            "agreement": self.agreement,
        }


def agreement(trace: Sequence[DecisionRecord], reference: Sequence[DecisionRecord]) -> float:
    """Share of reference requests that received the same decision."""
    ref = {r.order_id: r.decision for r in reference}
    common = [r for r in trace if r.order_id in ref]
    if not common:
        return 1.0 if not ref and not trace else 0.0
    return sum(r.decision is ref[r.order_id] for r in common) / len(common)


def _validated_orders(events: Sequence[PackageEvent], config: LockerConfig):
    try:
        check_sorted(events)
    except OrderingError as exc:
        raise ReplayError(str(exc)) from exc
    for i, e in enumerate(events):
        if e.locker_id != config.locker_id:
            raise ReplayError(f"event {i} (order {e.order_id}) belongs to locker {e.locker_id}, not {config.locker_id}")
        if not 1 <= e.ship_option <= config.n_options:
            raise ReplayError(f"event {i} (order {e.order_id}) has unknown ship option {e.ship_option}")
    try:
        orders = collect_orders(events)
    except InvalidEventError as exc:
        raise ReplayError(str(exc)) from exc
    for rec in orders.values():
        if rec.request is not None and rec.delivery is None:
            raise ReplayError(f"order {rec.order_id}: Request has no recorded Delivery to replay")
    return orders


def replay(events: Iterable[PackageEvent], policy: AdmissionPolicy, config: LockerConfig, *,
           window: tuple[int, int] | None = None,
           reference: Sequence[DecisionRecord] | None = None,
           committed: frozenset[str] | set[str] = frozenset()) -> SimulationReport:
    """Run every Request through ``policy`` in stream order.

    Accepted orders then follow their recorded Delivery/Pickup/Return events;
    rejected orders leave no trace. Throughput counts accepted packages
    delivered inside ``window`` (default: the whole stream); accepted packages
    delivered outside it are reported as ``edge_accepted``.

    Orders in ``committed`` were accepted before the replay starts: their
    Request is booked without a decision and they never count as throughput.
    Deliveries with no Request in the stream are placed when a slot is free.
    The policy's planner, if any, is called at the start of every day.
    """
    started = time.perf_counter()
    events = list(events)
    orders = _validated_orders(events, config)
    if not events:
        return SimulationReport(config.locker_id, policy.name, window or (0, -1),
                                throughput_by_option=(0,) * config.n_options,
                                agreement=None if reference is None else agreement((), reference))
    first, last = events[0].day, events[-1].day
    window = window or (first, last)
    state = LockerState(config, policy.presence_by_lag, policy.safety_margin)
    limits: dict[tuple[int, int], int] = dict(policy.limits or {})
    decisions: list[DecisionRecord] = []
    delivered: dict[str, tuple[int, int]] = {}     # oid -> (s, delivery day)
    door_failures: set[str] = set()
    departed: dict[str, int] = {}
    day = None
    for ev in events:
        while day is None or ev.day > day:
            day = first if day is None else day + 1
            state.start_day(day)
            if policy.planner is not None:
                limits.update(policy.planner(day - 1, state) or {})
        rec = orders[ev.order_id]
        if ev.kind is EventKind.Request:
            req = Request(ev.order_id, ev.ship_option, ev.day, rec.delivery.day, ev.within_day_seq)
            state.requested[(req.ship_option, req.delivery_day)] += 1
            if ev.order_id in committed:
                state.accept(req)
                continue
            dec = policy.decide(state, req, limits)
            if dec.decision is Decision.Accept:
                state.accept(req)
            decisions.append(dec)
        elif ev.kind is EventKind.Delivery:
            if ev.order_id in state.pending:
                if state.deliver(ev.order_id, ev.day):
                    delivered[ev.order_id] = (ev.ship_option - 1, ev.day)
                else:
                    door_failures.add(ev.order_id)
            elif rec.request is None:
                if state.place_unmanaged(ev.order_id, ev.ship_option - 1, ev.day):
                    delivered[ev.order_id] = (ev.ship_option - 1, ev.day)
        else:
            if ev.order_id in state.occupants:
                state.depart(ev.order_id, ev.day)
                departed[ev.order_id] = ev.day
        if len(state.occupants) > config.capacity:
            raise ReplayError(f"occupancy {len(state.occupants)} exceeds capacity at order {ev.order_id}")

    # realised day-level occupancy, then hindsight for each rejection
    occupancy: Counter = Counter()
    for oid, (_, v) in delivered.items():
        end = departed.get(oid, min(v + MAX_DWELL, last))
        for d in range(v, end + 1):
            occupancy[d] += 1
    max_occ = max(occupancy.values(), default=0)
    if max_occ > config.capacity:
        raise ReplayError(f"realised occupancy {max_occ} exceeds capacity {config.capacity}")
    final = []
    unjustified = 0
    for dec in decisions:
        if dec.decision is Decision.Reject:
            room = occupancy[dec.delivery_day] + 1 <= config.capacity
            unjustified += room
            dec = DecisionRecord(dec.order_id, dec.day, dec.ship_option, dec.decision, dec.reason, room,
                                 dec.delivery_day, dec.rule)
        final.append(dec)

    lo, hi = window
    n_acc = sum(d.decision is Decision.Accept for d in final)
    by_option = [0] * config.n_options
    edge = 0
    throughput = 0
    for oid, (s, v) in delivered.items():
        if orders[oid].request is None or oid in committed:
            continue
        if lo <= v <= hi:
            throughput += 1
            by_option[s] += 1
        else:
            edge += 1
    door_failures -= set(committed)
    if n_acc != throughput + edge + len(door_failures):
        raise ReplayError("accounting identity violated: accepted != delivered + edge + door failures")
    reasons = Counter(d.reason.value for d in final if d.decision is Decision.Reject)
    report = SimulationReport(
        locker_id=config.locker_id,
        policy=policy.name,
        window=(lo, hi),
        requests=len(final),
        accepted=n_acc,
        rejected=len(final) - n_acc,
        throughput=throughput,
        edge_accepted=edge,
        door_failures=len(door_failures),
        unjustified_rejections=int(unjustified),
        throughput_by_option=tuple(by_option),
        rejections_by_reason=tuple(sorted(reasons.items())),
        max_occupancy=max_occ,
        decisions=tuple(final),
        door_failed_orders=tuple(sorted(door_failures)),
        agreement=None if reference is None else agreement(final, reference),
        runtime_s=time.perf_counter() - started,
    )
    return report


# --- comparisons --------------------------------------------------------------

def pct_delta(value: float, base: float) -> float:
    if base == 0:
        return 0.0 if value == 0 else float("inf")
    return 100.0 * (value - base) / base


@dataclass
class PolicyComparison:
    locker_id: str
    baseline: str
    reports: dict[str, SimulationReport]

    def uplift(self, name: str, baseline: str | None = None) -> float:
        base = self.reports[baseline or self.baseline].throughput
        return pct_delta(self.reports[name].throughput, base)

    def pairwise(self) -> dict[tuple[str, str], float]:
        return {(a, b): pct_delta(ra.throughput, rb.throughput)
                for a, ra in self.reports.items() for b, rb in self.reports.items() if a != b}

    def ranking(self) -> list[tuple[str, float]]:
        return sorted(((n, self.uplift(n)) for n in self.reports), key=lambda kv: (-kv[1], kv[0]))


def compare_policies(events: Sequence[PackageEvent], policies: Mapping[str, AdmissionPolicy] | Sequence[AdmissionPolicy],
                     config: LockerConfig, *, window: tuple[int, int] | None = None,
                     baseline: str | None = None) -> PolicyComparison:
    if not isinstance(policies, Mapping):
        policies = {p.name: p for p in policies}
    if len(policies) < 2:
        raise ReplayError("compare_policies needs at least two policies")
    events = list(events)
    reports = {name: replay(events, p, config, window=window) for name, p in policies.items()}
    return PolicyComparison(config.locker_id, baseline or next(iter(policies)), reports)


# --- trace files ----------------------------------------------------------------

TRACE_HEADER = ["order_id", "day", "option", "decision", "reason", "hindsight"]


def write_trace(path, decisions: Sequence[DecisionRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for d in decisions:
            w.writerow([d.order_id, d.day, d.ship_option, d.decision.value, d.reason.value,
                        int(d.hindsight_space_available)])


def read_trace(path) -> list[DecisionRecord]:
    out = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            out.append(DecisionRecord(rec["order_id"], int(rec["day"]), int(rec["option"]),
                                      Decision(rec["decision"]), Reason(rec["reason"]), rec["hindsight"] == "1"))
    return out
