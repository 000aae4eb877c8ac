"""Trip data ingestion, travel-time estimation, demand statistics and synthetic scenarios."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, datetime
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .core import (
    ConfigError,
    DataError,
    ServiceNetwork,
    TimeGrid,
    TripRequest,
    dense_zone_index,
    minutes_to_slots,
)

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("pickup_datetime", "dropoff_datetime", "pickup_zone", "dropoff_zone")
# Column names used by the public TLC yellow-taxi trip records.
TLC_COLUMNS = {
    "tpep_pickup_datetime": "pickup_datetime",
    "tpep_dropoff_datetime": "dropoff_datetime",
    "PULocationID": "pickup_zone",
    "DOLocationID": "dropoff_zone",
}
DEFAULT_BETA_CAP = 20


@dataclass
class TripLog:
    """Requests of one day, sorted by request slot (stable on ties)."""

    requests: List[TripRequest]
    day: object = None
    zone_ids: Dict[object, int] = field(default_factory=dict)
    skipped: int = 0

    def __post_init__(self) -> None:
        self.requests = sorted(self.requests, key=lambda r: r.request_slot)

    def __len__(self) -> int:
        return len(self.requests)

    def __iter__(self):
        return iter(self.requests)

    @property
    def empty(self) -> bool:
        return not self.requests

    def n_zones(self) -> int:
        if self.zone_ids:
            return len(self.zone_ids)
        if not self.requests:
            return 0
        return 1 + max(max(r.origin, r.destination) for r in self.requests)


def resample_willingness(trip_log: TripLog, seed: int) -> TripLog:
    """Copy of ``trip_log`` with fresh uniform willingness draws from ``seed``."""
    rng = np.random.default_rng(seed)
    draws = rng.random(len(trip_log.requests))
    requests = [replace(r, customer_willingness=float(u)) for r, u in zip(trip_log.requests, draws)]
    return TripLog(requests, day=trip_log.day, zone_ids=dict(trip_log.zone_ids), skipped=trip_log.skipped)


def load_zone_map(path: Union[str, Path]) -> Dict[str, int]:
    """Read an ``external_id,dense_index`` CSV."""
    frame = pd.read_csv(path, dtype={"external_id": str})
    missing = {"external_id", "dense_index"} - set(frame.columns)
    if missing:
        raise DataError(f"zone map {path} lacks columns {sorted(missing)}")
    mapping = {str(e): int(d) for e, d in zip(frame["external_id"], frame["dense_index"])}
    if sorted(mapping.values()) != list(range(len(mapping))):
        raise DataError(f"zone map {path} indices are not dense 0..N-1")
    return mapping


def parse_trip_csv(
    path: Union[str, Path],
    zone_filter: Optional[Iterable[object]] = None,
    date_filter: Optional[Union[date, Iterable[date]]] = None,
    *,
    tau: float = 1.0,
    zone_map: Optional[Mapping[str, int]] = None,
    filter_mode: str = "any",
    seed: int = 0,
) -> TripLog:
    """Parse a trip CSV into a :class:`TripLog`.

    Rows are kept when the pickup date passes ``date_filter`` and, with
    ``filter_mode="any"``, either endpoint lies in ``zone_filter`` (``"both"``
    requires both). Rows with unparsable fields or a drop-off before the
    pickup are skipped and counted in ``TripLog.skipped``. Durations are
    rounded to slots and clamped to at least one slot.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"trip file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype={c: str for c in ("pickup_zone", "dropoff_zone", "PULocationID", "DOLocationID")})
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read trip file {path}: {exc}") from exc
    if not set(REQUIRED_COLUMNS) <= set(frame.columns):
        frame = frame.rename(columns={k: v for k, v in TLC_COLUMNS.items() if v not in frame.columns})
    missing = [c for c in REQUIRED_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"trip file {path} lacks columns {missing}")

    pickup = pd.to_datetime(frame["pickup_datetime"], errors="coerce")
    dropoff = pd.to_datetime(frame["dropoff_datetime"], errors="coerce")
    origin = frame["pickup_zone"].astype("string").str.strip()
    dest = frame["dropoff_zone"].astype("string").str.strip()
    malformed = pickup.isna() | dropoff.isna() | origin.isna() | dest.isna() | (dropoff < pickup)
    skipped = int(malformed.sum())
    keep = ~malformed

    if date_filter is not None:
        dates = {date_filter} if isinstance(date_filter, date) else set(date_filter)
        keep &= pickup.dt.date.isin(dates)
    if zone_filter is not None:
        allowed = {str(z) for z in zone_filter}
        in_o, in_d = origin.isin(allowed), dest.isin(allowed)
        if filter_mode == "any":
            keep &= in_o | in_d
        elif filter_mode == "both":
            keep &= in_o & in_d
        else:
            raise ConfigError(f"unknown filter_mode {filter_mode!r}")

    pickup, dropoff = pickup[keep], dropoff[keep]
    origin, dest = origin[keep], dest[keep]
    if zone_map is None:
        zone_map = {str(z): n for z, n in dense_zone_index(list(origin) + list(dest)).items()}
    else:
        unknown = ~(origin.isin(zone_map.keys()) & dest.isin(zone_map.keys()))
        if unknown.any():
            skipped += int(unknown.sum())
            pickup, dropoff = pickup[~unknown], dropoff[~unknown]
            origin, dest = origin[~unknown], dest[~unknown]

    days = pickup.dt.normalize()
    start_minutes = (pickup - days).dt.total_seconds() / 60.0
    dur_minutes = (dropoff - pickup).dt.total_seconds() / 60.0
    rng = np.random.default_rng(seed)
    willingness = rng.random(len(pickup))

    requests = [
        TripRequest(
            request_slot=int(math.floor(s / tau)),
            origin=zone_map[o],
            destination=zone_map[d],
            duration_slots=max(1, minutes_to_slots(m, tau)),
            customer_willingness=float(u),
        )
        for s, m, o, d, u in zip(start_minutes, dur_minutes, origin, dest, willingness)
    ]
    day_values = sorted(set(days.dt.date)) if len(days) else []
    day_id = day_values[0] if len(day_values) == 1 else (tuple(day_values) or None)
    trip_log = TripLog(requests, day=day_id, zone_ids=dict(zone_map), skipped=skipped)
    if trip_log.empty:
        log.warning("trip file %s produced an empty log after filtering", path)
    if skipped:
        log.info("skipped %d malformed rows in %s", skipped, path)
    return trip_log


def split_by_day(
    path: Union[str, Path], days: Sequence[date], **kwargs
) -> Dict[date, TripLog]:
    """Parse one file once per requested day, sharing a single zone map."""
    if "zone_map" not in kwargs:
        full = parse_trip_csv(path, date_filter=days, **kwargs)
        kwargs["zone_map"] = full.zone_ids
    return {d: parse_trip_csv(path, date_filter=d, **kwargs) for d in days}


def build_travel_time_matrix(trip_log: TripLog, N: Optional[int] = None) -> np.ndarray:
    """N x N matrix of mean trip durations (slots), rounded half up.

    Cells without observations fall back to the reverse direction's mean,
    then to the global mean duration of the log. Every entry is >= 1.
    """
    if trip_log.empty:
        raise DataError("cannot estimate travel times from an empty log")
    if N is None:
        N = trip_log.n_zones()
    total = np.zeros((N, N))
    count = np.zeros((N, N))
    for r in trip_log.requests:
        total[r.origin, r.destination] += r.duration_slots
        count[r.origin, r.destination] += 1
    observed = count > 0
    mean = np.divide(total, count, out=np.zeros_like(total), where=observed)
    global_mean = total.sum() / count.sum()

    filled = np.where(observed, mean, np.where(observed.T, mean.T, global_mean))
    return np.maximum(1, np.floor(filled + 0.5)).astype(np.int64)


@dataclass
class DemandModel:
    """Per-zone, per-slot request and arrival statistics over one day.

    ``request_hist[i, t, m]`` is the relative frequency of ``m`` requests in
    zone ``i`` during slot ``t`` of the day; ``arrival_hist`` likewise for
    drop-offs. ``mean_requests``/``mean_arrivals`` are the per-slot means
    used by the aggregate (worst-case) estimator.
    """

    request_hist: np.ndarray
    arrival_hist: np.ndarray
    mean_requests: np.ndarray
    mean_arrivals: np.ndarray
    n_days: int = 1

    @property
    def N(self) -> int:
        return self.request_hist.shape[0]

    @property
    def day_slots(self) -> int:
        return self.request_hist.shape[1]

    @property
    def beta_C(self) -> int:
        return self.request_hist.shape[2] - 1

    @property
    def beta_V(self) -> int:
        return self.arrival_hist.shape[2] - 1

    def f_C(self, zone: int, slot: int) -> np.ndarray:
        if 0 <= slot < self.day_slots:
            return self.request_hist[zone, slot]
        return _point_mass(self.beta_C)

    def f_A(self, zone: int, slot: int) -> np.ndarray:
        if 0 <= slot < self.day_slots:
            return self.arrival_hist[zone, slot]
        return _point_mass(self.beta_V)

    def window(self, zone: int, start: int, length: int) -> Tuple[List[np.ndarray], List[np.ndarray]]:
        """Arrival and request histograms for ``length`` slots from ``start``."""
        slots = range(start, start + length)
        return [self.f_A(zone, t) for t in slots], [self.f_C(zone, t) for t in slots]

    def expected_requests(self, zone: int, start: int, length: int) -> float:
        return float(self.mean_requests[zone, max(0, start) : max(0, start + length)].sum())

    def expected_arrivals(self, zone: int, start: int, length: int) -> float:
        return float(self.mean_arrivals[zone, max(0, start) : max(0, start + length)].sum())

    def to_dict(self) -> dict:
        return {
            "n_days": self.n_days,
            "request_hist": self.request_hist.tolist(),
            "arrival_hist": self.arrival_hist.tolist(),
            "mean_requests": self.mean_requests.tolist(),
            "mean_arrivals": self.mean_arrivals.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "DemandModel":
        return cls(
            request_hist=np.asarray(data["request_hist"], dtype=float),
            arrival_hist=np.asarray(data["arrival_hist"], dtype=float),
            mean_requests=np.asarray(data["mean_requests"], dtype=float),
            mean_arrivals=np.asarray(data["mean_arrivals"], dtype=float),
            n_days=int(data.get("n_days", 1)),
        )


def _point_mass(beta: int) -> np.ndarray:
    out = np.zeros(beta + 1)
    out[0] = 1.0
    return out


def _count_tensor(logs: Sequence[TripLog], N: int, day_slots: int) -> Tuple[np.ndarray, np.ndarray]:
    requests = np.zeros((len(logs), N, day_slots), dtype=np.int64)
    arrivals = np.zeros_like(requests)
    for d, trip_log in enumerate(logs):
        for r in trip_log.requests:
            if 0 <= r.request_slot < day_slots:
                requests[d, r.origin, r.request_slot] += 1
                arrive = r.request_slot + r.duration_slots
                if arrive < day_slots:
                    arrivals[d, r.destination, arrive] += 1
    return requests, arrivals


def _histogram(counts: np.ndarray, cap: int) -> np.ndarray:
    """Relative frequencies over the day axis; tail beyond ``cap`` folded into it."""
    capped = np.minimum(counts, cap)
    beta = max(1, int(capped.max()) if capped.size else 1)
    n_days = counts.shape[0]
    hist = np.zeros(counts.shape[1:] + (beta + 1,))
    for m in range(beta + 1):
        hist[..., m] = (capped == m).sum(axis=0) / n_days
    return hist


def build_demand_model(
    logs: Sequence[TripLog],
    day_slots: int,
    N: Optional[int] = None,
    beta_cap: int = DEFAULT_BETA_CAP,
) -> DemandModel:
    """Histogram demand model from one or more historical days.

    Arrival counts use the drop-off slot (request slot plus duration).
    """
    if not logs:
        raise ConfigError("need at least one historical day")
    if N is None:
        N = max(trip_log.n_zones() for trip_log in logs)
    requests, arrivals = _count_tensor(logs, N, day_slots)
    return DemandModel(
        request_hist=_histogram(requests, beta_cap),
        arrival_hist=_histogram(arrivals, beta_cap),
        mean_requests=requests.mean(axis=0),
        mean_arrivals=arrivals.mean(axis=0),
        n_days=len(logs),
    )


def validate_demand_model(model: DemandModel, atol: float = 1e-9) -> List[str]:
    """Itemized normalization problems of ``model`` (empty when clean)."""
    problems = []
    for name, hist in (("request_hist", model.request_hist), ("arrival_hist", model.arrival_hist)):
        if (hist < 0).any():
            zone, slot, _ = np.argwhere(hist < 0)[0]
            problems.append(f"{name}: negative mass at zone {zone}, slot {slot}")
        sums = hist.sum(axis=-1)
        bad = np.argwhere(np.abs(sums - 1.0) > atol)
        for zone, slot in bad[:20]:
            problems.append(f"{name}: zone {zone}, slot {slot} sums to {sums[zone, slot]:.12g}")
        if len(bad) > 20:
            problems.append(f"{name}: {len(bad) - 20} further histograms not normalized")
    return problems


def imbalance_ratio(trip_log: TripLog, zone: int, t1: int, t2: int) -> float:
    """Signed ratio of arrivals to departures of ``zone`` over slots ``[t1, t2)``.

    Departures are counted by request slot, arrivals by drop-off slot.
    Returns ``inf``/``-inf`` when one side is zero and ``nan`` when the zone
    saw no activity at all.
    """
    if t2 < t1:
        raise ValueError(f"invalid window [{t1}, {t2})")
    departures = sum(1 for r in trip_log.requests if r.origin == zone and t1 <= r.request_slot < t2)
    arrivals = sum(
        1 for r in trip_log.requests
        if r.destination == zone and t1 <= r.request_slot + r.duration_slots < t2
    )
    return ratio_from_counts(arrivals, departures)


def ratio_from_counts(arrivals: int, departures: int) -> float:
    if arrivals == 0 and departures == 0:
        return math.nan
    if arrivals >= departures:
        return math.inf if departures == 0 else arrivals / departures
    return -math.inf if arrivals == 0 else -departures / arrivals


@dataclass
class SyntheticSpec:
    """Parameters of a Poisson demand scenario.

    ``rates[i]`` is a list of ``(start_slot, end_slot, rate)`` segments giving
    the mean requests per slot departing zone ``i``. ``od[i]`` is the
    destination distribution of those requests; an optional ``od_segments``
    list of ``(start_slot, end_slot, matrix)`` overrides it inside windows.
    """

    N: int
    slots: int
    rates: List[List[Tuple[int, int, float]]]
    od: np.ndarray
    travel_time: np.ndarray
    od_segments: List[Tuple[int, int, np.ndarray]] = field(default_factory=list)
    name: str = "synthetic"

    def __post_init__(self) -> None:
        self.od = np.asarray(self.od, dtype=float)
        self.travel_time = np.asarray(self.travel_time, dtype=np.int64)
        self.od_segments = [(int(a), int(b), np.asarray(m, dtype=float)) for a, b, m in self.od_segments]
        if len(self.rates) != self.N:
            raise ConfigError(f"rates must list {self.N} zones, got {len(self.rates)}")
        for i, segments in enumerate(self.rates):
            for seg in segments:
                if len(seg) != 3 or seg[2] < 0:
                    raise ConfigError(f"zone {i}: bad rate segment {seg!r}")
        for label, matrix in [("od", self.od)] + [(f"od_segments[{n}]", m) for n, (_, _, m) in enumerate(self.od_segments)]:
            _check_stochastic(matrix, self.N, label)
        if self.travel_time.shape != (self.N, self.N):
            raise ConfigError("travel_time must be N x N")

    def rate_matrix(self) -> np.ndarray:
        out = np.zeros((self.N, self.slots))
        for i, segments in enumerate(self.rates):
            for start, end, rate in segments:
                out[i, max(0, int(start)) : min(self.slots, int(end))] = rate
        return out

    def od_at(self, slot: int) -> np.ndarray:
        for start, end, matrix in self.od_segments:
            if start <= slot < end:
                return matrix
        return self.od

    def network(self) -> ServiceNetwork:
        return ServiceNetwork(zones=tuple(range(self.N)), travel_time=self.travel_time)

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticSpec":
        try:
            return cls(
                N=int(data["N"]),
                slots=int(data["slots"]),
                rates=[[tuple(seg) for seg in zone] for zone in data["rates"]],
                od=np.asarray(data["od"], dtype=float),
                travel_time=np.asarray(data["travel_time"]),
                od_segments=[tuple(seg) for seg in data.get("od_segments", [])],
                name=str(data.get("name", "synthetic")),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synthetic spec: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "N": self.N,
            "slots": self.slots,
            "rates": [[list(seg) for seg in zone] for zone in self.rates],
            "od": self.od.tolist(),
            "travel_time": self.travel_time.tolist(),
            "od_segments": [[a, b, m.tolist()] for a, b, m in self.od_segments],
        }


def _check_stochastic(matrix: np.ndarray, N: int, label: str) -> None:
    if matrix.shape != (N, N):
        raise ConfigError(f"{label} must be {N}x{N}, got {matrix.shape}")
    if (matrix < 0).any():
        raise ConfigError(f"{label} has negative entries")
    rows = matrix.sum(axis=1)
    bad = np.flatnonzero(np.abs(rows - 1.0) > 1e-9)
    if bad.size:
        raise ConfigError(f"{label} rows {bad.tolist()} do not sum to 1")


def synthesize_demand(spec: SyntheticSpec, seed: int) -> TripLog:
    """Sample a day of Poisson requests; identical output for identical ``seed``.

    Requests within a slot are shuffled so FCFS order is not biased by zone
    index. Durations are taken from ``spec.travel_time``.
    """
    rng = np.random.default_rng(seed)
    rates = spec.rate_matrix()
    requests: List[TripRequest] = []
    for t in range(spec.slots):
        counts = rng.poisson(rates[:, t])
        if not counts.any():
            continue
        od = spec.od_at(t)
        slot_requests = []
        for i in np.flatnonzero(counts):
            dests = rng.choice(spec.N, size=int(counts[i]), p=od[i])
            slot_requests.extend((int(i), int(j)) for j in dests)
        order = rng.permutation(len(slot_requests))
        willingness = rng.random(len(slot_requests))
        for n, idx in enumerate(order):
            o, d = slot_requests[idx]
            requests.append(
                TripRequest(t, o, d, int(spec.travel_time[o, d]), float(willingness[n]))
            )
    return TripLog(requests, day=f"{spec.name}-seed{seed}", zone_ids={z: z for z in range(spec.N)})


def initial_fleet_placement(
    trip_log: TripLog, K: int, N: Optional[int] = None, window_slots: int = 120
) -> np.ndarray:
    """Spread ``K`` vehicles in proportion to departures in the first ``window_slots``.

    Largest-remainder rounding, ties to the lower zone index. Falls back to
    whole-log departures, then to a uniform split, when the window is empty.
    """
    if K < 0:
        raise ValueError("fleet size must be >= 0")
    if N is None:
        N = trip_log.n_zones()
    counts = np.zeros(N)
    if trip_log.requests:
        first = trip_log.requests[0].request_slot
        for r in trip_log.requests:
            if r.request_slot < first + window_slots:
                counts[r.origin] += 1
        if counts.sum() == 0:
            for r in trip_log.requests:
                counts[r.origin] += 1
    if counts.sum() == 0:
        counts[:] = 1.0
    return largest_remainder(counts / counts.sum(), K)


def largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    quotas = np.asarray(shares, dtype=float) * total
    base = np.floor(quotas + 1e-12).astype(np.int64)
    left = total - int(base.sum())
    if left > 0:
        remainders = quotas - base
        order = sorted(range(len(quotas)), key=lambda i: (-round(remainders[i], 12), i))
        for i in order[:left]:
            base[i] += 1
    return base
