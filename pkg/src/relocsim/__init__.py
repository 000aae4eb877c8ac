"""Rolling-horizon vehicle relocation for one-way car sharing."""

from .core import (
    Assignment,
    ConfigError,
    DataError,
    EnRoute,
    OperatorState,
    RelocationPlan,
    RelocsimError,
    ServiceNetwork,
    SystemState,
    TimeGrid,
    TripRequest,
)
from .ingest import DemandModel, SyntheticSpec, TripLog, build_demand_model, parse_trip_csv, synthesize_demand
from .scenario import load_scenario
from .simulator import ScenarioConfig, SimulationTrace, replicate, run

__version__ = "0.1.0"

__all__ = [
    "Assignment", "ConfigError", "DataError", "DemandModel", "EnRoute", "OperatorState",
    "RelocationPlan", "RelocsimError", "ScenarioConfig", "ServiceNetwork", "SimulationTrace",
    "SyntheticSpec", "SystemState", "TimeGrid", "TripLog", "TripRequest", "build_demand_model",
    "load_scenario", "parse_trip_csv", "replicate", "run", "synthesize_demand",
]
