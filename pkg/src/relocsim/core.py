"""Domain types and time-grid arithmetic shared across the package."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np


class RelocsimError(Exception):
    """Base class for all package errors."""


class ConfigError(RelocsimError):
    """Inconsistent or invalid configuration."""


class DataError(RelocsimError):
    """Input data that cannot be used (missing columns, unreadable file, ...)."""


@dataclass(frozen=True)
class TimeGrid:
    """Slot duration and the three horizon lengths, all in slots.

    ``n_C`` is the planning period, ``n_R`` the relocation bound and ``n_O``
    the prediction horizon; ``n_C <= n_R <= n_O`` is enforced.
    """

    tau: float = 1.0
    n_C: int = 15
    n_R: int = 30
    n_O: int = 45

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        for name in ("n_C", "n_R", "n_O"):
            value = getattr(self, name)
            if int(value) != value:
                raise ConfigError(f"{name} must be an integer slot count, got {value}")
        if self.n_C < 1:
            raise ConfigError(f"n_C must be >= 1, got {self.n_C}")
        if not (self.n_C <= self.n_R <= self.n_O):
            raise ConfigError(
                f"grid ordering n_C <= n_R <= n_O violated: "
                f"n_C={self.n_C}, n_R={self.n_R}, n_O={self.n_O}"
            )

    @property
    def T_C(self) -> float:
        return self.n_C * self.tau

    @property
    def T_R(self) -> float:
        return self.n_R * self.tau

    @property
    def T_O(self) -> float:
        return self.n_O * self.tau

    def decision_slot(self, k: int) -> int:
        return k * self.n_C


def slot_of(absolute_time: float, grid: TimeGrid) -> int:
    """Slot index containing ``absolute_time`` (minutes)."""
    if absolute_time < 0:
        raise ValueError(f"time must be non-negative, got {absolute_time}")
    return int(math.floor(absolute_time / grid.tau))


def time_of(slot: int, grid: TimeGrid) -> float:
    """Start time (minutes) of ``slot``; inverse of :func:`slot_of`."""
    if slot < 0:
        raise ValueError(f"slot must be non-negative, got {slot}")
    return slot * grid.tau


def minutes_to_slots(minutes: float, tau: float) -> int:
    """Round a duration to whole slots, halves rounded up."""
    return int(math.floor(minutes / tau + 0.5))


def decision_points(grid: TimeGrid, day_slots: int) -> List[int]:
    """Slots at which a relocation plan is computed: 0, n_C, 2 n_C, ..."""
    return list(range(0, day_slots, grid.n_C))


@dataclass(frozen=True, eq=False)
class ServiceNetwork:
    """Zones plus vehicle and relocator travel times, in slots.

    ``operator_travel_time`` defaults to ``travel_time`` with a zero diagonal:
    a relocator already in zone ``i`` needs no time to reach ``i``.
    """

    zones: Tuple[object, ...]
    travel_time: np.ndarray
    operator_travel_time: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        zones = tuple(self.zones)
        object.__setattr__(self, "zones", zones)
        n = len(zones)
        tt = np.asarray(self.travel_time)
        if tt.shape != (n, n):
            raise ConfigError(f"travel_time must be {n}x{n}, got {tt.shape}")
        if not np.all(np.equal(np.mod(tt, 1), 0)):
            raise ConfigError("travel_time entries must be whole slot counts")
        tt = tt.astype(np.int64)
        if (tt < 0).any():
            raise ConfigError("travel_time entries must be >= 0")
        tt.setflags(write=False)
        object.__setattr__(self, "travel_time", tt)
        ott = self.operator_travel_time
        if ott is None:
            ott = tt.copy()
            np.fill_diagonal(ott, 0)
        else:
            ott = np.asarray(ott)
            if ott.shape != tt.shape:
                raise ConfigError("operator_travel_time must match travel_time dimensions")
            ott = ott.astype(np.int64)
            if (ott < 0).any():
                raise ConfigError("operator_travel_time entries must be >= 0")
        ott.setflags(write=False)
        object.__setattr__(self, "operator_travel_time", ott)

    @property
    def N(self) -> int:
        return len(self.zones)

    def T(self, i: int, j: int) -> int:
        return int(self.travel_time[i, j])

    def T_op(self, i: int, j: int) -> int:
        return int(self.operator_travel_time[i, j])


@dataclass(frozen=True)
class TripRequest:
    request_slot: int
    origin: int
    destination: int
    duration_slots: int
    customer_willingness: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.customer_willingness <= 1.0:
            raise ValueError("customer_willingness must lie in [0, 1]")
        if self.duration_slots < 0:
            raise ValueError("duration_slots must be >= 0")


@dataclass(frozen=True)
class EnRoute:
    """A vehicle (or a train of ``train_size`` vehicles) travelling to ``destination``."""

    destination: int
    arrival_slot: int
    carries_passenger: bool
    train_size: int = 1


@dataclass(frozen=True)
class OperatorState:
    """Planning snapshot of one relocator.

    ``residual_time`` is the number of slots left before the relocator reaches
    ``destination_zone`` and becomes free; zero means idle there.
    """

    id: int
    available: bool
    residual_time: int
    destination_zone: int

    def __post_init__(self) -> None:
        if self.residual_time < 0:
            raise ValueError("residual_time must be >= 0")

    @property
    def idle(self) -> bool:
        return self.residual_time == 0


@dataclass(frozen=True)
class Assignment:
    """One relocator bound to one train task for a decision interval."""

    operator: int
    feeder: int
    receiver: int
    task_index: int
    train_size: int
    start_slot: int
    pickup_slot: int
    completion_slot: int


@dataclass
class SystemState:
    """Mutable state of a single simulation run."""

    slot: int
    inventory: np.ndarray
    en_route: Dict[int, List[EnRoute]] = field(default_factory=dict)
    operators: List[OperatorState] = field(default_factory=list)
    pending_tasks: List[Assignment] = field(default_factory=list)

    def add_en_route(self, entry: EnRoute) -> None:
        self.en_route.setdefault(entry.arrival_slot, []).append(entry)

    def en_route_entries(self) -> List[EnRoute]:
        return [e for slot in sorted(self.en_route) for e in self.en_route[slot]]

    def vehicles_en_route(self) -> int:
        return sum(e.train_size for entries in self.en_route.values() for e in entries)

    def fleet_size(self) -> int:
        return int(self.inventory.sum()) + self.vehicles_en_route()


@dataclass
class RelocationPlan:
    """Everything decided at one decision point."""

    decision_index: int
    flows: Dict[Tuple[int, int], int] = field(default_factory=dict)
    tasks: Dict[Tuple[int, int], List[int]] = field(default_factory=dict)
    assignments: List[Assignment] = field(default_factory=list)
    robotic_rates: Dict[Tuple[int, int], Fraction] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not any(self.flows.values())

    def check(self, eta: Optional[int] = None) -> List[str]:
        """Return a list of internal-consistency violations (empty when sound)."""
        problems = []
        for pair, x in self.flows.items():
            if x < 0:
                problems.append(f"negative flow {pair}={x}")
        for pair, sizes in self.tasks.items():
            if sum(sizes) != self.flows.get(pair, 0):
                problems.append(f"tasks {pair} sum to {sum(sizes)} != flow {self.flows.get(pair, 0)}")
            for p in sizes:
                if p < 1 or (eta is not None and p > eta):
                    problems.append(f"task size {p} out of range for {pair}")
        seen_ops, seen_tasks = set(), set()
        for a in self.assignments:
            key = (a.feeder, a.receiver, a.task_index)
            if a.operator in seen_ops:
                problems.append(f"operator {a.operator} assigned twice")
            if key in seen_tasks:
                problems.append(f"task {key} assigned twice")
            seen_ops.add(a.operator)
            seen_tasks.add(key)
            sizes = self.tasks.get((a.feeder, a.receiver), [])
            if not 0 <= a.task_index < len(sizes):
                problems.append(f"assignment references missing task {key}")
        return problems


def conservation_holds(state: SystemState, fleet_size: int) -> bool:
    return state.fleet_size() == fleet_size and bool((state.inventory >= 0).all())


def dense_zone_index(external_ids: Sequence[object]) -> Dict[object, int]:
    """Map external zone ids to dense indices 0..N-1 in sorted order."""
    return {z: n for n, z in enumerate(sorted(set(external_ids), key=_zone_sort_key))}


def _zone_sort_key(z: object) -> Tuple[int, object]:
    try:
        return (0, int(z))  # type: ignore[arg-type]
    except (TypeError, ValueError):
        return (1, str(z))
