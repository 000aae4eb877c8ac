"""Scenario files: JSON configuration resolved into a network, demand and simulator settings."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .core import ConfigError, DataError, ServiceNetwork, TimeGrid
from .ingest import (
    DemandModel,
    SyntheticSpec,
    TripLog,
    build_demand_model,
    build_travel_time_matrix,
    load_zone_map,
    parse_trip_csv,
    split_by_day,
    synthesize_demand,
    validate_demand_model,
)
from .simulator import ScenarioConfig

log = logging.getLogger(__name__)

BUILTIN = {"hub-and-spoke": "hub_and_spoke.json"}

# keys that belong to the scenario file but not to ScenarioConfig
_SCENARIO_ONLY = ("demand", "network", "beta_cap", "initial_inventory")


def builtin_path(name: str) -> Path:
    try:
        return Path(str(resources.files("relocsim") / "data" / BUILTIN[name]))
    except KeyError:
        raise ConfigError(f"unknown built-in scenario {name!r}; choose from {sorted(BUILTIN)}") from None


def read_config(source: Union[str, Path, Mapping]) -> dict:
    """Load a scenario dict from a mapping, a JSON file or a built-in name."""
    if isinstance(source, Mapping):
        return copy.deepcopy(dict(source))
    if str(source) in BUILTIN:
        source = builtin_path(str(source))
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    data.setdefault("_base_dir", str(path.parent.resolve()))
    return data


def parse_value(text: str):
    """Interpret an override value as JSON when possible, else as a plain string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(config: dict, overrides: Sequence[str]) -> dict:
    """Apply ``a.b.c=value`` assignments to a copy of ``config``."""
    out = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"bad override key {key!r}")
        node = out
        for p in parts[:-1]:
            child = node.get(p)
            if child is None:
                child = node[p] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
            node = child
        node[parts[-1]] = parse_value(raw)
    return out


def _resolve_path(raw: str, base: Optional[str]) -> Path:
    p = Path(raw)
    if not p.is_absolute() and base:
        p = Path(base) / p
    return p


def scenario_config(config: Mapping) -> ScenarioConfig:
    """The simulator settings of a resolved scenario dict."""
    settings = {k: v for k, v in config.items() if k not in _SCENARIO_ONLY and not k.startswith("_")}
    if "operator_shifts" in settings and settings["operator_shifts"] is not None:
        settings["operator_shifts"] = [tuple(s) for s in settings["operator_shifts"]]
    try:
        return ScenarioConfig.from_dict(settings)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


@dataclass
class Scenario:
    """Everything needed to simulate: settings, network, demand and the predictor's demand model."""

    raw: dict
    config: ScenarioConfig
    network: ServiceNetwork
    model: Optional[DemandModel]
    spec: Optional[SyntheticSpec] = None
    days: Dict[object, TripLog] = field(default_factory=dict)
    initial_inventory: Optional[List[int]] = None

    @property
    def synthetic(self) -> bool:
        return self.spec is not None

    def demand(self, seed: int, day: object = None) -> TripLog:
        """The trip log simulated for ``(day, seed)``; synthetic logs are drawn from ``seed``."""
        if self.spec is not None:
            return synthesize_demand(self.spec, seed)
        if day is None:
            day = next(iter(self.days))
        if day not in self.days:
            raise DataError(f"day {day} not loaded")
        return self.days[day]

    def day_keys(self, wanted: Optional[Sequence[object]] = None) -> List[object]:
        if self.spec is not None:
            return [self.spec.name]
        if not wanted:
            return list(self.days)
        keys = {str(k): k for k in self.days}
        missing = [d for d in wanted if str(d) not in keys]
        if missing:
            raise DataError(f"days not present in the demand data: {missing}")
        return [keys[str(d)] for d in wanted]


def _load_model(path: Path) -> DemandModel:
    if not path.exists():
        raise DataError(f"demand model file not found: {path}")
    try:
        return DemandModel.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"demand model {path} is malformed: {exc}") from exc


def _travel_matrix(raw, base: Optional[str]) -> np.ndarray:
    if isinstance(raw, str):
        path = _resolve_path(raw, base)
        if not path.exists():
            raise DataError(f"travel-time file not found: {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(raw, Mapping):
            raw = raw["travel_time"]
    return np.asarray(raw, dtype=float)


def load_scenario(source: Union[str, Path, Mapping], overrides: Sequence[str] = ()) -> Scenario:
    """Resolve a scenario file (plus ``key=value`` overrides) into a :class:`Scenario`."""
    raw = apply_overrides(read_config(source), overrides)
    base = raw.get("_base_dir")
    config = scenario_config(raw)
    demand = raw.get("demand")
    if not isinstance(demand, Mapping):
        raise ConfigError("config needs a 'demand' object")
    kind = demand.get("type", "synthetic")
    spec = None
    days: Dict[object, TripLog] = {}
    beta_cap = int(raw.get("beta_cap", 20))

    if kind == "synthetic":
        spec_raw = demand.get("spec")
        if isinstance(spec_raw, str):
            path = _resolve_path(spec_raw, base)
            if not path.exists():
                raise DataError(f"synthetic spec not found: {path}")
            spec_raw = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(spec_raw, Mapping):
            raise ConfigError("synthetic demand needs a 'spec' object or path")
        spec = SyntheticSpec.from_dict(spec_raw)
        if spec.slots < config.day_slots:
            raise ConfigError(f"synthetic spec covers {spec.slots} slots, day has {config.day_slots}")
        travel = spec.travel_time
        history = [
            synthesize_demand(spec, int(demand.get("training_seed", 10**5)) + d)
            for d in range(int(demand.get("training_days", 10)))
        ]
        N = spec.N
    elif kind == "csv":
        if "path" not in demand:
            raise ConfigError("csv demand needs a 'path'")
        path = _resolve_path(demand["path"], base)
        zone_map = load_zone_map(_resolve_path(demand["zone_map"], base)) if demand.get("zone_map") else None
        try:
            wanted_days = [date.fromisoformat(str(d)) for d in demand.get("days", [])]
        except ValueError as exc:
            raise ConfigError(f"bad date in demand.days: {exc}") from exc
        kwargs = dict(
            tau=config.grid.tau, zone_map=zone_map, seed=config.seed,
            filter_mode=demand.get("filter_mode", "any"), zone_filter=demand.get("zones"),
        )
        if wanted_days:
            days = split_by_day(path, wanted_days, **kwargs)
        else:
            whole = parse_trip_csv(path, **kwargs)
            days = {"all": whole}
        N = max(trip_log.n_zones() for trip_log in days.values())
        history = list(days.values())
        if not any(not t.empty for t in history):
            raise DataError(f"no trips left in {path} after filtering")
        travel = None
    else:
        raise ConfigError(f"unknown demand type {kind!r}; expected 'synthetic' or 'csv'")

    network_raw = raw.get("network") or {}
    if "travel_time" in network_raw:
        travel = _travel_matrix(network_raw["travel_time"], base)
    if travel is None:
        merged = TripLog([r for t in history for r in t.requests])
        travel = build_travel_time_matrix(merged, N)
    op_travel = network_raw.get("operator_travel_time")
    if op_travel is not None:
        op_travel = _travel_matrix(op_travel, base)
    try:
        network = ServiceNetwork(zones=tuple(range(N)), travel_time=travel, operator_travel_time=op_travel)
    except ValueError as exc:
        raise ConfigError(f"invalid travel-time matrix: {exc}") from exc

    if demand.get("model_path"):
        model = _load_model(_resolve_path(demand["model_path"], base))
    else:
        model = build_demand_model(history, config.day_slots, N, beta_cap=beta_cap)

    initial = raw.get("initial_inventory")
    return Scenario(raw=raw, config=config, network=network, model=model, spec=spec, days=days,
                    initial_inventory=list(initial) if initial is not None else None)


def validate_scenario(source: Union[str, Path, Mapping], overrides: Sequence[str] = ()) -> List[str]:
    """Structural problems of a scenario, itemized; no simulation is run."""
    problems: List[str] = []
    try:
        raw = apply_overrides(read_config(source), overrides)
    except ConfigError as exc:
        return [str(exc)]
    base = raw.get("_base_dir")
    try:
        config = scenario_config(raw)
    except ConfigError as exc:
        problems.append(f"settings: {exc}")
        config = None

    demand = raw.get("demand") if isinstance(raw.get("demand"), Mapping) else {}
    matrices: List[Tuple[str, object]] = []
    if demand.get("type", "synthetic") == "synthetic" and isinstance(demand.get("spec"), Mapping):
        spec = demand["spec"]
        matrices.append(("demand.spec.travel_time", spec.get("travel_time")))
        N = spec.get("N")
        for label, m in [("demand.spec.od", spec.get("od"))] + [
            (f"demand.spec.od_segments[{n}]", seg[2]) for n, seg in enumerate(spec.get("od_segments", []))
        ]:
            problems += _check_stochastic(label, m, N)
    network_raw = raw.get("network") or {}
    for key in ("travel_time", "operator_travel_time"):
        if key in network_raw:
            try:
                matrices.append((f"network.{key}", _travel_matrix(network_raw[key], base)))
            except (DataError, OSError, ValueError, KeyError) as exc:
                problems.append(f"network.{key}: {exc}")
    for label, m in matrices:
        problems += _check_travel(label, m)

    if demand.get("model_path"):
        try:
            model = _load_model(_resolve_path(demand["model_path"], base))
            problems += [f"demand model: {p}" for p in validate_demand_model(model)]
        except DataError as exc:
            problems.append(str(exc))
    if problems:
        return problems
    try:
        scenario = load_scenario(raw)
    except (ConfigError, DataError) as exc:
        return [str(exc)]
    if scenario.model is not None:
        problems += [f"demand model: {p}" for p in validate_demand_model(scenario.model)]
        if scenario.model.N != scenario.network.N:
            problems.append(f"demand model covers {scenario.model.N} zones, network has {scenario.network.N}")
    if config is not None and config.operator_zones:
        problems += [f"operator zone {z} outside network" for z in config.operator_zones
                     if not 0 <= z < scenario.network.N]
    return problems


def _check_travel(label: str, matrix) -> List[str]:
    try:
        m = np.asarray(matrix, dtype=float)
    except (TypeError, ValueError):
        return [f"{label}: not a numeric matrix"]
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return [f"{label}: expected a square matrix, got shape {m.shape}"]
    out = []
    for i, j in np.argwhere(~np.isfinite(m)):
        out.append(f"{label}[{i}][{j}] is missing")
    for i, j in np.argwhere(np.isfinite(m) & (m < 0)):
        out.append(f"{label}[{i}][{j}] = {m[i, j]:g} is negative")
    return out


def _check_stochastic(label: str, matrix, N) -> List[str]:
    try:
        m = np.asarray(matrix, dtype=float)
    except (TypeError, ValueError):
        return [f"{label}: not a numeric matrix"]
    if m.ndim != 2 or (N is not None and m.shape != (N, N)):
        return [f"{label}: expected shape ({N}, {N}), got {m.shape}"]
    out = [f"{label}[{i}][{j}] = {m[i, j]:g} is negative" for i, j in np.argwhere(m < 0)]
    for i, s in enumerate(m.sum(axis=1)):
        if abs(s - 1.0) > 1e-9:
            out.append(f"{label} row {i} sums to {s:.12g}")
    return out
