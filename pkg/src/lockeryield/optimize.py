"""Throughput-maximising capacity reservations.

Decision variables per ship option ``s`` and horizon day ``t``: ``y[s, t]``
packages accepted for delivery and ``x[s, t]`` slots reserved (the expected
occupancy those acceptances plus the carryover produce)::

    max   sum_{s,t} y[s,t]
    s.t.  sum_s sum_{v<=t} p[s,v,t] y[s,v] + sum_s sum_{v<=0} p[s,v,t] e[s,v] <= C   for each t
          y[s,t] <= d[s,t]
          x[s,t] = sum_{v=1..t} p[s,v,t] y[s,v] + sum_{v=-6..0} p[s,v,t] e[s,v]
          x, y >= 0
"""
from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import MAX_DWELL, N_DWELL, Carryover, ConfigError, LockerConfig, ShipOption
from .dwell import PresenceMatrix
from .forecast import DemandForecast
from .simplex import SolverError, solve

RESIDUAL_TOL = 1e-9


class BuildError(ConfigError):
    pass


@dataclass
class LpInstance:
    S: int
    T: int
    C: float
    demand: np.ndarray          # (S, T)
    presence: np.ndarray        # (S, T + 7, T)
    carryover: np.ndarray       # (S, 7)
    options: tuple[ShipOption, ...]
    y_index: np.ndarray         # (S, T) column of y[s, t]
    x_index: np.ndarray         # (S, T) column of x[s, t]
    c: np.ndarray
    A_ub: np.ndarray            # capacity rows then demand bounds
    b_ub: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray

    @property
    def n_variables(self) -> int:
        return len(self.c)

    @property
    def n_capacity_rows(self) -> int:
        return self.T

    @property
    def n_demand_bounds(self) -> int:
        return self.S * self.T

    @property
    def n_equalities(self) -> int:
        return len(self.A_eq)

    def carryover_load(self) -> np.ndarray:
        """``sum_v p[s,v,t] e[s,v]`` per (s, t)."""
        return np.einsum("svt,sv->st", self.presence[:, :N_DWELL, :], self.carryover)


def build_lp(forecast: DemandForecast, presence: PresenceMatrix, carryover: Carryover, config: LockerConfig) -> LpInstance:
    d = forecast.values if isinstance(forecast, DemandForecast) else np.asarray(forecast, dtype=float)
    p = presence.values if isinstance(presence, PresenceMatrix) else np.asarray(presence, dtype=float)
    e = carryover.counts if isinstance(carryover, Carryover) else np.asarray(carryover, dtype=float)
    S, T = d.shape
    C = float(config.capacity)
    if S != config.n_options:
        raise BuildError(f"forecast has {S} options, config has {config.n_options}")
    if p.shape != (S, T + N_DWELL, T):
        raise BuildError(f"presence shape {p.shape} does not match S={S}, T={T}")
    if e.shape != (S, N_DWELL):
        raise BuildError(f"carryover shape {e.shape} does not match S={S}")
    if not (np.isfinite(d).all() and np.isfinite(p).all() and np.isfinite(e).all()):
        raise BuildError("LP inputs must be finite")
    if (d < 0).any() or (e < 0).any() or (p < 0).any() or (p > 1).any():
        raise BuildError("demand and carryover must be >= 0 and presence within [0, 1]")
    if e.sum() > C + 1e-9:
        raise BuildError(f"carryover {e.sum()} exceeds capacity {C}")

    # faster options first so degenerate ties resolve in their favour
    by_speed = sorted(range(S), key=lambda s: config.ship_options[s].speed_rank)
    y_index = np.zeros((S, T), dtype=np.int64)
    x_index = np.zeros((S, T), dtype=np.int64)
    col = 0
    for s in by_speed:
        for t in range(T):
            y_index[s, t] = col
            col += 1
    for s in by_speed:
        for t in range(T):
            x_index[s, t] = col
            col += 1
    n = col
    c = np.zeros(n)
    c[y_index.ravel()] = 1.0

    carry = np.einsum("svt,sv->st", p[:, :N_DWELL, :], e)
    A_cap = np.zeros((T, n))
    for t in range(T):
        for s in range(S):
            for v in range(t + 1):
                A_cap[t, y_index[s, v]] += p[s, v + 1 + MAX_DWELL, t]
    b_cap = C - carry.sum(axis=0)
    A_dem = np.zeros((S * T, n))
    b_dem = np.zeros(S * T)
    A_eq = np.zeros((S * T, n))
    b_eq = np.zeros(S * T)
    r = 0
    for s in by_speed:
        for t in range(T):
            A_dem[r, y_index[s, t]] = 1.0
            b_dem[r] = d[s, t]
            A_eq[r, x_index[s, t]] = 1.0
            for v in range(t + 1):
                A_eq[r, y_index[s, v]] -= p[s, v + 1 + MAX_DWELL, t]
            b_eq[r] = carry[s, t]
            r += 1
    return LpInstance(S, T, C, d.copy(), p.copy(), e.copy(), tuple(config.ship_options), y_index, x_index, c,
                      np.vstack([A_cap, A_dem]), np.concatenate([b_cap, b_dem]), A_eq, b_eq)


@dataclass
class ReservationPlan:
    x: np.ndarray
    y: np.ndarray
    objective: float
    booking_limits: np.ndarray
    instance: LpInstance

    def residuals(self) -> dict[str, float]:
        return plan_residuals(self.instance, self.x, self.y)


def expected_occupancy_matrix(y, presence, carryover) -> np.ndarray:
    """Per-option expected occupancy ``(S, T)``: the right-hand side of the slot identity."""
    y = np.asarray(y, dtype=float)
    p = presence.values if isinstance(presence, PresenceMatrix) else np.asarray(presence, dtype=float)
    e = carryover.counts if isinstance(carryover, Carryover) else np.asarray(carryover, dtype=float)
    S, T = y.shape
    occ = np.einsum("svt,sv->st", p[:, :N_DWELL, :], e)
    for t in range(T):
        occ[:, t] += (p[:, N_DWELL: N_DWELL + t + 1, t] * y[:, : t + 1]).sum(axis=1)
    return occ


def expected_occupancy(plan_or_y, presence=None, carryover=None) -> np.ndarray:
    """Expected total occupancy per horizon day."""
    if isinstance(plan_or_y, ReservationPlan):
        inst = plan_or_y.instance
        presence = inst.presence if presence is None else presence
        carryover = inst.carryover if carryover is None else carryover
        plan_or_y = plan_or_y.y
    return expected_occupancy_matrix(plan_or_y, presence, carryover).sum(axis=0)


def plan_residuals(inst: LpInstance, x, y) -> dict[str, float]:
    occ = expected_occupancy_matrix(y, inst.presence, inst.carryover)
    return {
        "capacity": float(max(0.0, (occ.sum(axis=0) - inst.C).max())),
        "demand": float(max(0.0, (y - inst.demand).max())),
        "nonneg": float(max(0.0, -min(x.min(), y.min()))),
        "slot_identity": float(np.abs(x - occ).max()),
    }


def solve_lp(inst: LpInstance) -> ReservationPlan:
    """Exact optimum; among optimal plans the one favouring faster options."""
    ranks = np.array([o.speed_rank for o in inst.options])
    order = np.argsort(ranks, kind="stable")
    weight = np.empty(inst.S)
    weight[order] = np.arange(inst.S, 0, -1)
    secondary = np.zeros(inst.n_variables)
    for s in range(inst.S):
        secondary[inst.y_index[s]] = weight[s]
    try:
        sol = solve(inst.c, inst.A_ub, inst.b_ub, inst.A_eq, inst.b_eq, secondary=secondary)
    except SolverError as exc:
        raise SolverError(f"LP solve failed: {exc}") from exc
    y = np.clip(sol.z[inst.y_index], 0.0, inst.demand)
    x = expected_occupancy_matrix(y, inst.presence, inst.carryover)
    res = plan_residuals(inst, x, y)
    if max(res.values()) > RESIDUAL_TOL * max(1.0, inst.C):
        raise SolverError("LP solution violates constraints", res)
    plan = ReservationPlan(x, y, float(y.sum()), np.zeros_like(y, dtype=np.int64), inst)
    plan.booking_limits = integerize_plan(plan)
    return plan


def integerize_plan(plan: ReservationPlan) -> np.ndarray:
    """Integer booking limits per (s, t).

    Day by day: floor each ``y``, then hand out the remaining whole units by
    largest fractional part (faster option first on ties), skipping any unit
    that would push expected occupancy above capacity on some day.
    """
    inst = plan.instance
    y = plan.y
    S, T = y.shape
    lim = np.floor(y + 1e-9).astype(np.int64)
    ranks = [o.speed_rank for o in inst.options]
    for t in range(T):
        units = int(math.floor(y[:, t].sum() + 1e-9)) - int(lim[:, t].sum())
        frac = y[:, t] - lim[:, t]
        for s in sorted(range(S), key=lambda s: (-round(frac[s], 12), ranks[s])):
            if units <= 0:
                break
            if frac[s] <= 1e-12:
                continue
            lim[s, t] += 1
            occ = expected_occupancy(lim.astype(float), inst.presence, inst.carryover)
            if (occ[t:] > inst.C + 1e-9).any():
                lim[s, t] -= 1
                continue
            units -= 1
    return lim


def solve_reservations(forecast, presence, carryover, config: LockerConfig) -> ReservationPlan:
    return solve_lp(build_lp(forecast, presence, carryover, config))


# --- plan file ---------------------------------------------------------------

PLAN_HEADER = ["locker_id", "ship_option", "day", "y_lp", "x_lp", "booking_limit"]


def write_plan(path, locker_id: str, plan_day: int, plan: ReservationPlan) -> None:
    """Plan rows use absolute days (plan day + horizon day); the objective sits in a leading comment."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# locker_id={locker_id} plan_day={plan_day} objective={plan.objective!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_HEADER)
        S, T = plan.y.shape
        for s in range(S):
            for t in range(T):
                w.writerow([locker_id, s + 1, plan_day + t + 1, repr(float(plan.y[s, t])),
                            repr(float(plan.x[s, t])), int(plan.booking_limits[s, t])])


@dataclass
class PlanFile:
    locker_id: str
    plan_day: int
    objective: float
    limits: dict[tuple[int, int], int]
    y: dict[tuple[int, int], float]
    x: dict[tuple[int, int], float]


def read_plan(path) -> PlanFile:
    meta = {}
    rows = []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                for part in line[1:].split():
                    k, _, v = part.partition("=")
                    meta[k] = v
            elif line.strip():
                rows.append(line)
    reader = csv.DictReader(rows)
    if reader.fieldnames != PLAN_HEADER:
        raise ConfigError(f"{path}: plan header must be {','.join(PLAN_HEADER)}")
    limits, y, x = {}, {}, {}
    locker = meta.get("locker_id", "")
    for rec in reader:
        key = (int(rec["ship_option"]), int(rec["day"]))
        limits[key] = int(rec["booking_limit"])
        y[key] = float(rec["y_lp"])
        x[key] = float(rec["x_lp"])
        locker = rec["locker_id"]
    return PlanFile(locker, int(meta.get("plan_day", 0)), float(meta.get("objective", "nan")), limits, y, x)


def limits_by_day(plan: ReservationPlan, plan_day: int) -> dict[tuple[int, int], int]:
    """Booking limits keyed by (option id, absolute day)."""
    S, T = plan.booking_limits.shape
    return {(s + 1, plan_day + t + 1): int(plan.booking_limits[s, t]) for s in range(S) for t in range(T)}


def stack_plans(files: Sequence[PlanFile]) -> dict[tuple[int, int], int]:
    """Merge plan files in plan-day order; later plans override overlapping days."""
    out: dict[tuple[int, int], int] = {}
    for f in sorted(files, key=lambda f: f.plan_day):
        out.update(f.limits)
    return out
