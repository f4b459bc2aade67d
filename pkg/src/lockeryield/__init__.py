"""Parcel-locker yield management: demand forecasts, dwell pmfs, reservation LPs and replay."""
from .core import (
    DEFAULT_OPTIONS,
    Carryover,
    ConfigError,
    EventKind,
    InvalidEventError,
    LockerConfig,
    LockerError,
    OrderingError,
    PackageEvent,
    ShipOption,
    capacity_normalized_error,
    dwell_days,
    extract_carryover,
)
from .optimize import ReservationPlan, build_lp, integerize_plan, solve_lp
from .simplex import SolverError
from .simulate import AdmissionPolicy, PolicyKind, ReplayError, SimulationReport, compare_policies, replay

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_OPTIONS", "Carryover", "ConfigError", "EventKind", "InvalidEventError", "LockerConfig",
    "LockerError", "OrderingError", "PackageEvent", "ShipOption", "capacity_normalized_error", "dwell_days",
    "extract_carryover", "ReservationPlan", "build_lp", "integerize_plan", "solve_lp", "SolverError",
    "AdmissionPolicy", "PolicyKind", "ReplayError", "SimulationReport", "compare_policies", "replay",
]
