"""End-to-end runs: train the forecast and dwell models, plan reservations, replay policies."""
from __future__ import annotations

import datetime as _dt
import json
import logging
import time
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_EPOCH,
    N_DWELL,
    ConfigError,
    EventKind,
    LockerConfig,
    PackageEvent,
    ShipOption,
    extract_carryover,
)
from .dwell import (
    DwellModelSet,
    PresenceMatrix,
    check_pmf,
    expected_departures,
    pickup_error_metric,
    plan_day_pmfs,
    pmf_to_presence,
    pooled_histories_rows,
    survival,
    train_dwell_classifier,
)
from .formats import LockerRow, read_events, read_home, read_lockers, read_options
from .forecast import (
    ForecastModel,
    ForecastSettings,
    build_training_set,
    feature_row,
    forecast_nmape,
    proportion_rule_forecast,
    train_forecast_model,
)
from .history import HomeDeliveries, LockerHistory
from .optimize import build_lp, limits_by_day, solve_lp, write_plan
from .simulate import AdmissionPolicy, LockerState, PolicyComparison, compare_policies, write_trace
from .trees import ForestParams

log = logging.getLogger(__name__)

POLICIES = ("FCFS", "ProportionRule", "Reservation")
PICKUP_MIN_SHARE = 0.25     # below this the early-booking estimate is too noisy to use


@dataclass
class PipelineConfig:
    data_dir: Path = Path("bench")
    out_dir: Path = Path("out")
    lockers: tuple[str, ...] = ()          # empty means every locker in the data
    horizon: int = 7
    run_date: int = 0
    window: tuple[int, int] = (1, 15)
    forecast_seed: int = 0
    dwell_seed: int = 1000
    forest: ForestParams = field(default_factory=ForestParams)
    dwell_forest: ForestParams = field(default_factory=lambda: ForestParams(n_trees=50))
    training_weeks: int = 16
    policies: tuple[str, ...] = POLICIES
    safety_margin: float = 0.0
    cadence: str = "daily"
    nested_limits: bool = True
    pickup_update: bool = True
    conditional_carryover: bool = True
    per_option_pmf: bool = False
    pool_by: str = "zip"
    workers: int = 1
    epoch: _dt.date = DEFAULT_EPOCH

    def validate(self) -> None:
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.window[0] <= self.run_date or self.window[1] < self.window[0]:
            raise ConfigError("the replay window must start after the run date")
        if self.cadence not in ("daily", "weekly"):
            raise ConfigError("cadence must be daily or weekly")
        if not 0.0 <= self.safety_margin <= 1.0:
            raise ConfigError("safety margin must lie in [0, 1]")
        bad = [p for p in self.policies if p not in POLICIES]
        if bad or len(self.policies) < 1:
            raise ConfigError(f"unknown policies {bad}; choose from {POLICIES}")
        if self.pool_by not in ("zip", "locker", "all"):
            raise ConfigError("pool_by must be zip, locker or all")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def cadence_days(self) -> int:
        return 1 if self.cadence == "daily" else 7

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data_dir"], d["out_dir"], d["epoch"] = str(self.data_dir), str(self.out_dir), self.epoch.isoformat()
        return d

    @classmethod
    def from_dict(cls, d: Mapping, base: PipelineConfig | None = None) -> PipelineConfig:
        cfg = asdict(base or cls())
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(d)
        for k in ("forest", "dwell_forest"):
            if isinstance(cfg[k], Mapping):
                try:
                    cfg[k] = ForestParams(**cfg[k])
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"{k}: {exc}") from None
        cfg["data_dir"], cfg["out_dir"] = Path(cfg["data_dir"]), Path(cfg["out_dir"])
        cfg["window"] = tuple(int(x) for x in cfg["window"])
        cfg["lockers"] = tuple(cfg["lockers"])
        cfg["policies"] = tuple(cfg["policies"])
        if isinstance(cfg["epoch"], str):
            cfg["epoch"] = _dt.date.fromisoformat(cfg["epoch"])
        out = cls(**cfg)
        out.validate()
        return out


# --- data ---------------------------------------------------------------------

@dataclass
class Dataset:
    lockers: list[LockerRow]
    options: tuple[ShipOption, ...]
    home: HomeDeliveries
    history: dict[str, list[PackageEvent]]       # observed production log
    trace: dict[str, list[PackageEvent]]         # demand stream to replay
    tiers: dict[str, str] = field(default_factory=dict)

    def config(self, locker_id: str, horizon: int = 7) -> LockerConfig:
        row = self.row(locker_id)
        return LockerConfig(row.locker_id, row.capacity, self.options, horizon)

    def row(self, locker_id: str) -> LockerRow:
        for r in self.lockers:
            if r.locker_id == locker_id:
                return r
        raise ConfigError(f"unknown locker {locker_id}")

    @property
    def locker_ids(self) -> list[str]:
        return [r.locker_id for r in self.lockers]


def load_dataset(data_dir, lockers: Sequence[str] = ()) -> Dataset:
    data_dir = Path(data_dir)
    rows = read_lockers(data_dir / "lockers.csv")
    if lockers:
        missing = set(lockers) - {r.locker_id for r in rows}
        if missing:
            raise ConfigError(f"lockers not in {data_dir}: {sorted(missing)}")
        rows = [r for r in rows if r.locker_id in set(lockers)]
    options = read_options(data_dir / "options.csv")
    home = read_home(data_dir / "home.csv")
    history, trace = {}, {}
    for r in rows:
        history[r.locker_id] = read_events(data_dir / "history" / f"{r.locker_id}.csv", n_options=len(options))
        tpath = data_dir / "events" / f"{r.locker_id}.csv"
        trace[r.locker_id] = read_events(tpath, n_options=len(options)) if tpath.exists() else []
    tiers = {}
    mpath = data_dir / "manifest.json"
    if mpath.exists():
        tiers = {e["locker_id"]: e.get("tier", "") for e in json.loads(mpath.read_text()).get("lockers", [])}
    return Dataset(rows, options, home, history, trace, tiers)


def build_histories(ds: Dataset, start_day: int | None = None) -> dict[str, LockerHistory]:
    out = {}
    for r in ds.lockers:
        evs = ds.history[r.locker_id]
        last = max([e.day for e in evs] + [e.day for e in ds.trace.get(r.locker_id, [])], default=0)
        out[r.locker_id] = LockerHistory.from_events(evs, ds.config(r.locker_id), start_day, last)
        if out[r.locker_id].clamped_dwells:
            log.warning("locker %s: %d dwell values above six days were clamped", r.locker_id,
                        out[r.locker_id].clamped_dwells)
    return out


def pool_key(row: LockerRow, pool_by: str) -> str:
    return {"zip": row.zip_code, "locker": row.locker_id, "all": "all"}[pool_by]


# --- training -------------------------------------------------------------------

@dataclass
class TrainedModels:
    forecast: ForecastModel | None       # None when history is too short
    dwell: DwellModelSet
    train_seconds: float = 0.0


def train_models(ds: Dataset, cfg: PipelineConfig, histories: Mapping[str, LockerHistory] | None = None) -> TrainedModels:
    started = time.perf_counter()
    histories = histories or build_histories(ds)
    settings = ForecastSettings(training_weeks=cfg.training_weeks, epoch=cfg.epoch, params=cfg.forest)
    weeks = min(((cfg.run_date - h.start_day + 1) / 7.0 for h in histories.values()), default=0.0)
    forecast = None
    if weeks >= settings.min_weeks + 4:
        training = {}
        for h in range(1, cfg.horizon + 1):
            rows = []
            for r in ds.lockers:
                rows.extend(build_training_set(histories[r.locker_id], ds.home, r.zip_code, cfg.run_date, h, settings))
            training[h] = rows
        if all(training.values()):
            forecast = train_forecast_model(training, cfg.forest, cfg.forecast_seed)
    if forecast is None:
        log.warning("under %d weeks of usable history; demand falls back to the proportion rule", settings.min_weeks)
    pools: dict[str, dict[str, LockerHistory]] = {}
    for r in ds.lockers:
        pools.setdefault(pool_key(r, cfg.pool_by), {})[r.locker_id] = histories[r.locker_id]
    first = cfg.run_date - 7 * cfg.training_weeks
    models = {}
    for k, (key, group) in enumerate(sorted(pools.items())):
        X, counts = pooled_histories_rows(group, first, cfg.run_date - N_DWELL + 1, len(ds.options), cfg.epoch)
        models[key] = train_dwell_classifier(X, counts, cfg.dwell_forest, cfg.dwell_seed + k, n_options=len(ds.options))
    return TrainedModels(forecast, DwellModelSet(models), time.perf_counter() - started)


def save_models(models: TrainedModels, out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if models.forecast is not None:
        (out_dir / "forecast.json").write_text(models.forecast.to_json())
    (out_dir / "dwell.json").write_text(models.dwell.to_json())


def load_models(out_dir: Path) -> TrainedModels:
    out_dir = Path(out_dir)
    fpath, dpath = out_dir / "forecast.json", out_dir / "dwell.json"
    if not dpath.exists():
        raise ConfigError(f"no trained models in {out_dir}; run train first")
    forecast = ForecastModel.from_json(fpath.read_text()) if fpath.exists() else None
    return TrainedModels(forecast, DwellModelSet.from_json(dpath.read_text()))


# --- per-plan-day inputs ------------------------------------------------------------

@dataclass
class PlanInputs:
    """Forecast and dwell estimates for one locker, keyed by plan day."""

    locker_id: str
    demand: dict[int, np.ndarray]      # (S, T)
    pmfs: dict[int, np.ndarray]        # (S, T + 7, 7)
    proportion: dict[int, np.ndarray]  # (S, T) legacy slot shares as a demand forecast
    booked_ahead: np.ndarray | None = None   # (S, 8): share of orders placed >= k days ahead
    static_limits: dict[tuple[int, int], int] | None = None   # fixed limits from plan files

    def presence(self, plan_day: int, conditional: bool = True) -> PresenceMatrix:
        return pmf_to_presence(self.pmfs[plan_day], self.demand[plan_day].shape[1], conditional_carryover=conditional)

    def lag_presence(self) -> np.ndarray:
        """Per-option presence-by-lag curves from the first plan day's horizon pmfs."""
        first = min(self.pmfs)
        return survival(self.pmfs[first][:, N_DWELL:].mean(axis=1))


def proportion_demand(ds: Dataset, row: LockerRow, plan_day: int, horizon: int, epoch) -> np.ndarray:
    from .core import day_to_date

    S = len(ds.options)
    return np.column_stack([
        proportion_rule_forecast(ds.home.last_year_vector(row.zip_code, day_to_date(plan_day + t, epoch), S), row.capacity)
        for t in range(1, horizon + 1)])


def plan_inputs(ds: Dataset, models: TrainedModels, histories: Mapping[str, LockerHistory],
                cfg: PipelineConfig, plan_days: Sequence[int]) -> dict[str, PlanInputs]:
    """Batch forecasts for every locker and plan day, one forest call per horizon day."""
    S, T = len(ds.options), cfg.horizon
    keys = [(r, d) for r in ds.lockers for d in plan_days]
    demand = {}
    if models.forecast is not None:
        X = np.zeros((T, len(keys) * S, 10))
        for i, (r, d) in enumerate(keys):
            h = histories[r.locker_id]
            for t in range(1, T + 1):
                for s in range(1, S + 1):
                    X[t - 1, i * S + s - 1] = feature_row(h, ds.home, r.zip_code, s, d + t, d, cfg.epoch).as_array()
        pred = np.zeros((len(keys) * S, T))
        for t in range(1, T + 1):
            pred[:, t - 1] = models.forecast.forests[t].predict(X[t - 1])
        pred = np.maximum(pred, 0.0)
        for i, (r, d) in enumerate(keys):
            demand[(r.locker_id, d)] = pred[i * S:(i + 1) * S]
    out: dict[str, PlanInputs] = {}
    for r in ds.lockers:
        model = models.dwell.for_pool(pool_key(r, cfg.pool_by))
        h = histories[r.locker_id]
        prop = {d: proportion_demand(ds, r, d, T, cfg.epoch) for d in plan_days}
        dem = {d: demand.get((r.locker_id, d), prop[d]) for d in plan_days}
        pmfs = {d: plan_day_pmfs(model, h, d, T, cfg.epoch, per_option=cfg.per_option_pmf) for d in plan_days}
        out[r.locker_id] = PlanInputs(r.locker_id, dem, pmfs, prop,
                                      booking_curve(ds.history[r.locker_id], S, cfg.run_date))
    return out


def booking_curve(events: Sequence[PackageEvent], n_options: int, through: int, horizon: int = 7) -> np.ndarray:
    """``out[s, k]``: share of delivered orders of option ``s`` placed at least ``k`` days ahead.

    Estimated from orders delivered on or before ``through``; Laplace-smoothed.
    """
    req = {}
    lags = np.zeros((n_options, horizon + 2))
    for e in events:
        if e.kind is EventKind.Request:
            req[e.order_id] = e.day
        elif e.kind is EventKind.Delivery and e.day <= through and e.order_id in req:
            lags[e.ship_option - 1, min(e.day - req[e.order_id], horizon + 1)] += 1
    lags += 1.0 / lags.shape[1]
    tail = np.cumsum(lags[:, ::-1], axis=1)[:, ::-1]
    return tail[:, : horizon + 1] / tail[:, :1]


# --- planning -----------------------------------------------------------------------

def carryover_at(events: Sequence[PackageEvent], day: int, config: LockerConfig):
    return extract_carryover(events, day, config)


def plan_locker(ds: Dataset, inputs: PlanInputs, cfg: PipelineConfig, plan_day: int):
    config = ds.config(inputs.locker_id, cfg.horizon)
    carry = carryover_at(ds.history[inputs.locker_id], plan_day, config)
    inst = build_lp(inputs.demand[plan_day], inputs.presence(plan_day, cfg.conditional_carryover), carry, config)
    return solve_lp(inst)


def actual_deliveries(events: Sequence[PackageEvent], n_options: int, first: int, last: int) -> np.ndarray:
    out = np.zeros((n_options, last - first + 1))
    for e in events:
        if e.kind is EventKind.Delivery and first <= e.day <= last:
            out[e.ship_option - 1, e.day - first] += 1
    return out


def stage_metrics(ds: Dataset, inputs: Mapping[str, PlanInputs], histories: Mapping[str, LockerHistory],
                  models: TrainedModels, cfg: PipelineConfig, plan_day: int) -> dict:
    """Forecast nMAPE against the demand trace and pickup error against the production log."""
    S, T = len(ds.options), cfg.horizon
    lo, hi = plan_day + 1, plan_day + T
    f_err, p_err, n_cells = [], [], 0
    exp_m, exp_pool, act = [], [], []
    for r in ds.lockers:
        truth = actual_deliveries(ds.trace[r.locker_id] or ds.history[r.locker_id], S, lo, hi)
        inp = inputs[r.locker_id]
        f_err.append(forecast_nmape(inp.demand[plan_day], truth, r.capacity))
        p_err.append(forecast_nmape(inp.proportion[plan_day], truth, r.capacity))
        # departures from packages delivered on plan_day-6 .. plan_day+T per the production log
        h = histories[r.locker_id]
        first = plan_day - N_DWELL + 1
        deliv = np.column_stack([h.deliveries[:, d - h.start_day] for d in range(first, hi + 1)])
        dep = h.departures()[:, lo - h.start_day: hi + 1 - h.start_day].sum(axis=0)
        model = models.dwell.for_pool(pool_key(r, cfg.pool_by))
        e_model = expected_departures(deliv, inp.pmfs[plan_day])[N_DWELL:]
        e_pool = expected_departures(deliv, model.pooled)[N_DWELL:]
        # only packages delivered inside the span contribute to both sides
        within = np.zeros(T)
        for d in range(first, hi + 1):
            for k in range(N_DWELL):
                if lo <= d + k <= hi:
                    within[d + k - lo] += h.dwell_counts[:, d - h.start_day, k].sum()
        exp_m.append(e_model)
        exp_pool.append(e_pool)
        act.append(within)
        n_cells += S * T
    caps = np.array([r.capacity for r in ds.lockers], dtype=float)
    return {
        "plan_day": plan_day,
        "forecast_nmape_forest": float(np.mean(f_err)) if f_err else 0.0,
        "forecast_nmape_proportion": float(np.mean(p_err)) if p_err else 0.0,
        "pickup_error_model": pickup_error_metric(np.array(exp_m), np.array(act), caps) if act else 0.0,
        "pickup_error_pooled": pickup_error_metric(np.array(exp_pool), np.array(act), caps) if act else 0.0,
        "forecast_source": "forest" if models.forecast is not None else "proportion",
    }


def check_probabilities(inputs: Mapping[str, PlanInputs], cfg: PipelineConfig) -> list[str]:
    """Every pmf sums to one and every presence matrix is well formed."""
    problems = []
    for lid, inp in inputs.items():
        for d, q in inp.pmfs.items():
            try:
                check_pmf(q)
            except ConfigError as exc:
                problems.append(f"{lid} day {d}: {exc}")
            for cond in (False, True):
                problems.extend(f"{lid} day {d}: {v}" for v in inp.presence(d, cond).violations())
    return problems


def write_plans(ds: Dataset, inputs: Mapping[str, PlanInputs], cfg: PipelineConfig, plan_day: int,
                out_dir: Path) -> dict[str, float]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    objectives = {}
    for r in ds.lockers:
        plan = plan_locker(ds, inputs[r.locker_id], cfg, plan_day)
        write_plan(out_dir / f"{r.locker_id}.csv", r.locker_id, plan_day, plan)
        objectives[r.locker_id] = plan.objective
    return objectives


# --- replay -----------------------------------------------------------------------------

def replay_stream(ds: Dataset, locker_id: str, cfg: PipelineConfig) -> tuple[list[PackageEvent], frozenset[str]]:
    """Demand to replay plus the orders the production system had already accepted.

    Orders requested on or before the run date keep the production outcome:
    accepted ones are booked up front, rejected ones are dropped. Orders
    requested inside the window are left to the policy under test.
    """
    lo, hi = cfg.window
    produced = {e.order_id for e in ds.history[locker_id] if e.kind is EventKind.Delivery}
    req_day, deliv_day = {}, {}
    for e in ds.trace[locker_id]:
        if e.kind is EventKind.Request:
            req_day[e.order_id] = e.day
        elif e.kind is EventKind.Delivery:
            deliv_day[e.order_id] = e.day
    keep, committed = set(), set()
    for oid, dd in deliv_day.items():
        rd = req_day.get(oid, dd)
        if dd < cfg.run_date - N_DWELL + 1 or rd > hi:
            continue
        if rd <= cfg.run_date:
            if oid in produced:
                keep.add(oid)
                committed.add(oid)
        else:
            keep.add(oid)
    return [e for e in ds.trace[locker_id] if e.order_id in keep], frozenset(committed)


def make_planner(inputs: PlanInputs, config: LockerConfig, cfg: PipelineConfig):
    """Re-solve the LP at the configured cadence from the simulated locker state.

    Returns ``(planner, to_come)``; ``to_come`` reads the demand estimates of
    the latest solve.
    """
    lo, hi = cfg.window
    step = cfg.cadence_days
    presence = {}
    latest: dict[tuple[int, int], float] = {}

    def to_come(option: int, day: int, today: int) -> float:
        d = latest.get((option, day))
        if d is None or inputs.booked_ahead is None:
            return float("inf")
        ahead = day - today
        booked = inputs.booked_ahead[option - 1, ahead + 1] if ahead + 1 < inputs.booked_ahead.shape[1] else 0.0
        return d * (1.0 - booked)

    def planner(plan_day: int, state: LockerState):
        if plan_day < cfg.run_date or plan_day >= hi or (plan_day - cfg.run_date) % step:
            return None
        d = inputs.demand[plan_day].copy()
        for s in range(config.n_options):
            for t in range(cfg.horizon):
                day = plan_day + t + 1
                d[s, t] = max(d[s, t], state.accepted[(s + 1, day)])
                share = inputs.booked_ahead[s, t + 1] if inputs.booked_ahead is not None else 0.0
                if cfg.pickup_update and share >= PICKUP_MIN_SHARE:
                    d[s, t] = max(d[s, t], state.requested[(s + 1, day)] / share)
        if plan_day not in presence:
            presence[plan_day] = inputs.presence(plan_day, cfg.conditional_carryover)
        plan = solve_lp(build_lp(d, presence[plan_day], state.carryover(plan_day), config))
        for s in range(config.n_options):
            for t in range(cfg.horizon):
                latest[(s + 1, plan_day + t + 1)] = float(d[s, t])
        return limits_by_day(plan, plan_day)

    return planner, to_come


def build_policies(ds: Dataset, inputs: PlanInputs, cfg: PipelineConfig) -> dict[str, AdmissionPolicy]:
    from .bench import proportion_policy

    row = ds.row(inputs.locker_id)
    config = ds.config(row.locker_id, cfg.horizon)
    surv = inputs.lag_presence()
    out = {}
    for name in cfg.policies:
        if name == "FCFS":
            out[name] = AdmissionPolicy.fcfs(surv, safety_margin=cfg.safety_margin, name=name)
        elif name == "ProportionRule":
            p = proportion_policy(ds.home, row.zip_code, row.capacity, ds.options, surv, cfg.epoch)
            p.safety_margin = cfg.safety_margin
            out[name] = p
        elif inputs.static_limits is not None:
            out[name] = AdmissionPolicy.reservation(surv, limits=inputs.static_limits,
                                                    safety_margin=cfg.safety_margin, nested=cfg.nested_limits,
                                                    name=name)
        else:
            planner, to_come = make_planner(inputs, config, cfg)
            out[name] = AdmissionPolicy.reservation(surv, planner=planner, safety_margin=cfg.safety_margin,
                                                    nested=cfg.nested_limits,
                                                    to_come=to_come if cfg.pickup_update else None, name=name)
    return out


def simulate_locker(ds: Dataset, inputs: PlanInputs, cfg: PipelineConfig) -> PolicyComparison:
    config = ds.config(inputs.locker_id, cfg.horizon)
    events, committed = replay_stream(ds, inputs.locker_id, cfg)
    policies = build_policies(ds, inputs, cfg)
    from .simulate import replay

    reports = {name: replay(events, p, config, window=cfg.window, committed=committed) for name, p in policies.items()}
    baseline = "ProportionRule" if "ProportionRule" in reports else next(iter(reports))
    return PolicyComparison(config.locker_id, baseline, reports)


@dataclass
class RunResult:
    comparisons: dict[str, PolicyComparison]
    metrics: dict
    timings: dict[str, float]
    inputs: dict[str, PlanInputs]
    models: TrainedModels


def _simulate_job(args):
    ds, inputs, cfg = args
    return simulate_locker(ds, inputs, cfg)


def simulate_all(ds: Dataset, inputs: Mapping[str, PlanInputs], cfg: PipelineConfig) -> dict[str, PolicyComparison]:
    ids = ds.locker_ids
    if cfg.workers <= 1 or len(ids) <= 1:
        return {lid: simulate_locker(ds, inputs[lid], cfg) for lid in ids}
    jobs = []
    for lid in ids:
        sub = Dataset([ds.row(lid)], ds.options, ds.home, {lid: ds.history[lid]}, {lid: ds.trace[lid]}, ds.tiers)
        jobs.append((sub, inputs[lid], cfg))
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return dict(zip(ids, pool.map(_simulate_job, jobs)))


def run_pipeline(ds: Dataset, cfg: PipelineConfig, models: TrainedModels | None = None) -> RunResult:
    """Train (unless models are given), forecast every plan day, then replay each policy."""
    cfg.validate()
    timings = {}
    t0 = time.perf_counter()
    histories = build_histories(ds)
    timings["history"] = time.perf_counter() - t0
    if models is None:
        t = time.perf_counter()
        models = train_models(ds, cfg, histories)
        timings["train"] = time.perf_counter() - t
    t = time.perf_counter()
    plan_days = list(range(cfg.run_date, cfg.window[1]))
    inputs = plan_inputs(ds, models, histories, cfg, plan_days)
    metrics = stage_metrics(ds, inputs, histories, models, cfg, cfg.run_date)
    timings["plan_inputs"] = time.perf_counter() - t
    t = time.perf_counter()
    comparisons = simulate_all(ds, inputs, cfg)
    timings["simulate"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    return RunResult(comparisons, metrics, timings, inputs, models)


# --- reports ---------------------------------------------------------------------------

UPLIFT_HEADER = ["rank", "locker_id", "tier", "capacity", "requests", "policy", "baseline",
                 "throughput", "baseline_throughput", "uplift_pct"]


def uplift_rows(ds: Dataset, comparisons: Mapping[str, PolicyComparison], policy: str = "Reservation",
                baseline: str | None = None) -> list[dict]:
    rows = []
    for lid, comp in comparisons.items():
        if policy not in comp.reports:
            continue
        base = baseline or comp.baseline
        r, b = comp.reports[policy], comp.reports[base]
        rows.append({"locker_id": lid, "tier": ds.tiers.get(lid, ""), "capacity": ds.row(lid).capacity,
                     "requests": r.requests, "policy": policy, "baseline": base, "throughput": r.throughput,
                     "baseline_throughput": b.throughput, "uplift_pct": comp.uplift(policy, base)})
    rows.sort(key=lambda x: (-x["uplift_pct"], x["locker_id"]))
    for i, row in enumerate(rows, start=1):
        row["rank"] = i
    return rows


def write_reports(ds: Dataset, result: RunResult, cfg: PipelineConfig, out_dir: Path) -> None:
    import csv

    out_dir = Path(out_dir)
    (out_dir / "traces").mkdir(parents=True, exist_ok=True)
    summaries = {}
    for lid, comp in sorted(result.comparisons.items()):
        summaries[lid] = {name: rep.summary() for name, rep in comp.reports.items()}
        for name, rep in comp.reports.items():
            write_trace(out_dir / "traces" / f"{lid}_{name}.csv", rep.decisions)
    (out_dir / "summary.json").write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    for base in [p for p in cfg.policies if p != "Reservation"]:
        rows = uplift_rows(ds, result.comparisons, "Reservation", base)
        with (out_dir / f"uplift_vs_{base}.csv").open("w", newline="") as fh:
            w = csv.DictWriter(fh, UPLIFT_HEADER, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({**r, "uplift_pct": f"{r['uplift_pct']:.6f}"})
    (out_dir / "metrics.json").write_text(json.dumps(result.metrics, indent=2, sort_keys=True) + "\n")


def dataset_from_world(world) -> Dataset:
    """In-memory dataset from a freshly built benchmark world."""
    return Dataset([b.row for b in world.lockers], world.spec.options, world.home, dict(world.production),
                   dict(world.trace), {b.row.locker_id: b.tier for b in world.lockers})
