"""Key performance indicators computed from simulation traces, plus report writers."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from .ingest import TripLog, imbalance_ratio
from .simulator import ADMIT, OPERATOR, REJECT, SimulationTrace

UNDEFINED = float("nan")

# Default train-length bins count the service car, so a full train of 7 is "8".
DEFAULT_TRAIN_BINS: Tuple[Tuple[str, int, int], ...] = (
    ("<3", 1, 2),
    ("3-4", 3, 4),
    ("5-7", 5, 7),
    ("=8", 8, 8),
)

MOST_IMBALANCED = "most-imbalanced"


def _window_ok(slot: int, window: Optional[Tuple[int, int]]) -> bool:
    return window is None or window[0] <= slot < window[1]


def rejection_rate(trace: SimulationTrace, window: Optional[Tuple[int, int]] = None,
                   zones: Optional[Iterable[int]] = None) -> float:
    """Percentage of requests rejected, optionally restricted to a slot window and origin zones.

    Returns ``nan`` when no request falls inside the filter.
    """
    zone_set = None if zones is None else set(zones)
    admitted = rejected = 0
    for e in trace.events:
        if e.kind not in (ADMIT, REJECT) or e.slot >= trace.day_slots:
            continue
        if not _window_ok(e.slot, window) or (zone_set is not None and e.origin not in zone_set):
            continue
        if e.kind == ADMIT:
            admitted += 1
        else:
            rejected += 1
    total = admitted + rejected
    return 100.0 * rejected / total if total else UNDEFINED


def most_imbalanced_zones(trip_log: TripLog, n: int = 5, window: Optional[Tuple[int, int]] = None,
                          n_zones: Optional[int] = None) -> List[int]:
    """The ``n`` zones whose arrivals fall shortest of departures (most negative ratio)."""
    N = n_zones if n_zones is not None else trip_log.n_zones()
    t1, t2 = window if window is not None else (0, max((r.request_slot for r in trip_log.requests), default=0) + 1)
    scored = []
    for z in range(N):
        rho = imbalance_ratio(trip_log, z, t1, t2)
        if math.isnan(rho):
            continue
        scored.append((rho, z))
    scored.sort()
    return [z for _, z in scored[:n]]


def utilization(trace: SimulationTrace, K: Optional[int] = None, day_slots: Optional[int] = None) -> float:
    """Share of available vehicle-time spent carrying passengers (percent).

    Trip time running past the end of the day is not counted.
    """
    K = trace.fleet_size if K is None else K
    day_slots = trace.day_slots if day_slots is None else day_slots
    if K <= 0 or day_slots <= 0:
        return UNDEFINED
    busy = sum(min(e.arrival_slot, day_slots) - e.slot for e in trace.events if e.kind == ADMIT and e.slot < day_slots)
    return 100.0 * busy / (K * day_slots)


def utilization_from_slots(trace: SimulationTrace, K: Optional[int] = None, day_slots: Optional[int] = None) -> float:
    """Same quantity as :func:`utilization`, integrated from the per-slot busy counts."""
    K = trace.fleet_size if K is None else K
    day_slots = trace.day_slots if day_slots is None else day_slots
    if K <= 0 or day_slots <= 0:
        return UNDEFINED
    busy = trace.slot_stats["busy_vehicles"][:day_slots]
    return 100.0 * float(busy.sum()) / (K * day_slots)


def peak_utilization(trace: SimulationTrace, window_slots: int = 60, K: Optional[int] = None) -> float:
    """Highest utilization averaged over any aligned window of ``window_slots``."""
    K = trace.fleet_size if K is None else K
    if K <= 0:
        return UNDEFINED
    busy = trace.slot_stats["busy_vehicles"][: trace.day_slots].astype(float)
    if busy.size == 0:
        return 0.0
    window_slots = max(1, min(window_slots, busy.size))
    n = busy.size // window_slots
    blocks = busy[: n * window_slots].reshape(n, window_slots).mean(axis=1) if n else busy[None].mean(axis=1)
    return 100.0 * float(blocks.max()) / K


def _passenger_time(trace: SimulationTrace) -> int:
    return sum(e.arrival_slot - e.slot for e in trace.events if e.kind == ADMIT)


def _operator_tasks(trace: SimulationTrace):
    return [t for t in trace.tasks if t.mode == OPERATOR and t.realized > 0]


def relocation_efficiency(trace: SimulationTrace, M: Optional[int] = None) -> Dict[str, float]:
    """Workload and productivity of the relocation workforce.

    ``relocated_per_relocation_time`` counts each train's loaded leg once;
    the empty repositioning legs only enter ``rebalancing_time_fraction``.
    """
    M = trace.n_operators if M is None else M
    tasks = _operator_tasks(trace)
    moved = sum(t.realized for t in tasks)
    loaded = sum(t.relocation_slots for t in tasks)
    empty = sum(t.rebalance_slots for t in tasks)
    passenger = _passenger_time(trace)
    return {
        "tasks_per_relocator": len(tasks) / M if M > 0 else UNDEFINED,
        "relocated_per_relocation_time": moved / loaded if loaded else UNDEFINED,
        "relocation_time_ratio": loaded / passenger if passenger else 0.0,
        "rebalancing_time_fraction": 100.0 * empty / (empty + loaded) if empty + loaded else UNDEFINED,
    }


def train_length_histogram(trace: SimulationTrace,
                           bins: Sequence[Tuple[str, int, int]] = DEFAULT_TRAIN_BINS,
                           count_service_car: bool = True) -> Dict[str, int]:
    """Executed operator trains per length bin; bins are inclusive ``(label, low, high)``."""
    out = {label: 0 for label, _, _ in bins}
    for t in _operator_tasks(trace):
        length = t.realized + (1 if count_service_car else 0)
        for label, low, high in bins:
            if low <= length <= high:
                out[label] += 1
                break
    return out


def solver_time_stats(trace: SimulationTrace) -> Dict[str, float]:
    times = np.asarray(trace.solver_times, dtype=float)
    if times.size == 0:
        return {"mean": 0.0, "max": 0.0, "count": 0}
    return {"mean": float(times.mean()), "max": float(times.max()), "count": int(times.size)}


@dataclass
class KpiReport:
    key: str
    scheme: str
    requests: int
    rejection_rate: float
    utilization: float
    peak_utilization: float
    tasks_per_relocator: float
    relocated_per_relocation_time: float
    relocation_time_ratio: float
    rebalancing_time_fraction: float
    relocated_vehicles: int
    train_length_histogram: Dict[str, int] = field(default_factory=dict)
    rejection_by_window: Dict[str, float] = field(default_factory=dict)
    rejection_by_zone: Dict[str, float] = field(default_factory=dict)
    solver_time: Dict[str, float] = field(default_factory=dict)
    params: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "KpiReport":
        return cls(**dict(data))


def kpi_report(trace: SimulationTrace, key: str = "", window_slots: int = 60,
               zones: Optional[Sequence[int]] = None, params: Optional[Mapping] = None) -> KpiReport:
    eff = relocation_efficiency(trace)
    by_window = {
        f"{s}-{min(s + window_slots, trace.day_slots)}": rejection_rate(trace, (s, s + window_slots))
        for s in range(0, trace.day_slots, window_slots)
    }
    by_zone = {} if zones is None else {str(z): rejection_rate(trace, zones=[z]) for z in zones}
    return KpiReport(
        key=key or "/".join(str(k) for k in trace.key),
        scheme=trace.config.get("scheme", ""),
        requests=trace.n_requests,
        rejection_rate=rejection_rate(trace),
        utilization=utilization(trace),
        peak_utilization=peak_utilization(trace, window_slots),
        tasks_per_relocator=eff["tasks_per_relocator"],
        relocated_per_relocation_time=eff["relocated_per_relocation_time"],
        relocation_time_ratio=eff["relocation_time_ratio"],
        rebalancing_time_fraction=eff["rebalancing_time_fraction"],
        relocated_vehicles=sum(t.realized for t in trace.tasks),
        train_length_histogram=train_length_histogram(trace),
        rejection_by_window=by_window,
        rejection_by_zone=by_zone,
        solver_time=solver_time_stats(trace),
        params=dict(params or {}),
    )


SCALAR_COLUMNS = (
    "requests", "rejection_rate", "utilization", "peak_utilization", "tasks_per_relocator",
    "relocated_per_relocation_time", "relocation_time_ratio", "rebalancing_time_fraction",
    "relocated_vehicles",
)


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> Tuple[float, Optional[float]]:
    """Mean and Student-t half-width; the half-width is None for fewer than two values."""
    x = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if x.size == 0:
        return UNDEFINED, None
    mean = float(x.mean())
    if x.size < 2:
        return mean, None
    sem = float(x.std(ddof=1)) / math.sqrt(x.size)
    return mean, float(stats.t.ppf(0.5 + confidence / 2, x.size - 1) * sem)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(round(value, 10))
    return str(value)


def aggregate(reports: Sequence[KpiReport], group_by: Sequence[str] = ()) -> List[dict]:
    """Mean and 95% half-width per scalar column, grouped by the named params."""
    groups: Dict[tuple, List[KpiReport]] = {}
    for r in reports:
        groups.setdefault(tuple(r.params.get(g) for g in group_by), []).append(r)
    rows = []
    for gkey, members in groups.items():
        row = {g: v for g, v in zip(group_by, gkey)}
        row["replications"] = len(members)
        for col in SCALAR_COLUMNS:
            mean, half = mean_ci([float(getattr(m, col)) for m in members])
            row[f"{col}_mean"] = mean
            row[f"{col}_ci95"] = half
        rows.append(row)
    return rows


def write_report(reports: Sequence[KpiReport], path: Union[str, Path], format: str = "csv",
                 group_by: Sequence[str] = ()) -> Path:
    """Write per-run rows followed by aggregate rows (CSV) or the full nested reports (JSON)."""
    if not reports:
        raise ValueError("write_report needs at least one report")
    path = Path(path)
    if format == "json":
        payload = {
            "runs": [r.to_dict() for r in reports],
            "aggregate": aggregate(reports, group_by),
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n", encoding="utf-8")
        return path
    if format != "csv":
        raise ValueError(f"unknown report format {format!r}")
    param_cols = sorted({k for r in reports for k in r.params})
    columns = ["row", "key", "scheme", *param_cols, "replications"]
    for col in SCALAR_COLUMNS:
        columns += [col, f"{col}_ci95"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for r in reports:
            values = {"row": "run", "key": r.key, "scheme": r.scheme, "replications": 1, **r.params}
            values.update({col: getattr(r, col) for col in SCALAR_COLUMNS})
            writer.writerow([_fmt(values.get(c)) for c in columns])
        for agg in aggregate(reports, group_by):
            values = {"row": "mean", "key": "", "scheme": reports[0].scheme if len({r.scheme for r in reports}) == 1 else ""}
            values.update({k: v for k, v in agg.items() if k in param_cols or k == "replications"})
            for col in SCALAR_COLUMNS:
                values[col] = agg[f"{col}_mean"]
                values[f"{col}_ci95"] = agg[f"{col}_ci95"]
            writer.writerow([_fmt(values.get(c)) for c in columns])
    return path


def read_report_json(path: Union[str, Path]) -> List[KpiReport]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [KpiReport.from_dict(r) for r in data["runs"]]
