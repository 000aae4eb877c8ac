"""Slot-by-slot simulation of a one-way car-sharing system under a rolling-horizon relocation policy."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .core import (
    Assignment,
    ConfigError,
    EnRoute,
    OperatorState,
    RelocationPlan,
    ServiceNetwork,
    SystemState,
    TimeGrid,
)
from .flows import solve_relocation_flows, split_into_tasks, utility_matrix
from .ingest import DemandModel, TripLog, build_demand_model, initial_fleet_placement, resample_willingness
from .predictor import (
    ESTIMATORS,
    EXACT_ORACLE,
    PROBABILISTIC,
    WORST_CASE,
    ImbalanceReport,
    classify_zones,
    exact_imbalance,
    probabilistic_imbalance,
    virtual_inventory,
    worst_case_imbalance,
)
from .scheduler import assign_operators, robotic_rates, user_based_decide

log = logging.getLogger(__name__)

OPERATOR = "operator"
USER = "user"
ROBOTIC = "robotic"
NONE = "none"
SCHEMES = (OPERATOR, USER, ROBOTIC, NONE)
_SCHEME_ALIASES = {
    "operator-based": OPERATOR, "opr": OPERATOR, "user-based": USER, "usr": USER,
    "robot": ROBOTIC, "autonomous": ROBOTIC, "ar": ROBOTIC, "no-relocation": NONE,
}

# event kinds
ADMIT = "admit"
REJECT = "reject"
TRIP_ARRIVAL = "trip_arrival"
RELOCATION_DEPARTURE = "relocation_departure"
RELOCATION_ARRIVAL = "relocation_arrival"
TASK_ABORTED = "task_aborted"

SLOT_COLUMNS = (
    "slot", "admissions", "rejections", "relocations_inflight", "idle_operators",
    "busy_vehicles", "parked", "en_route", "min_inventory",
)


@dataclass(frozen=True)
class ScenarioConfig:
    grid: TimeGrid = field(default_factory=TimeGrid)
    scheme: str = OPERATOR
    eta: int = 7
    gamma: float = 1.0
    predictor: str = WORST_CASE
    epsilon: float = 0.05
    fleet_size: int = 100
    operators: int = 0
    operator_shifts: Optional[Tuple[Tuple[int, int], ...]] = None
    operator_zones: Optional[Tuple[int, ...]] = None
    seed: int = 0
    day_slots: int = 1440

    def __post_init__(self) -> None:
        scheme = _SCHEME_ALIASES.get(str(self.scheme).lower(), str(self.scheme).lower())
        object.__setattr__(self, "scheme", scheme)
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.predictor not in ESTIMATORS:
            raise ConfigError(f"unknown predictor {self.predictor!r}; expected one of {ESTIMATORS}")
        if scheme == OPERATOR and self.eta < 1:
            raise ConfigError("eta must be >= 1 for the operator-based scheme")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        for name in ("fleet_size", "operators", "day_slots"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.day_slots < self.grid.n_C:
            raise ConfigError("day_slots must cover at least one planning period")
        if self.operator_shifts is not None:
            shifts = tuple((int(a), int(b)) for a, b in self.operator_shifts)
            if len(shifts) != self.operators:
                raise ConfigError("operator_shifts must list one window per operator")
            object.__setattr__(self, "operator_shifts", shifts)
        if self.operator_zones is not None:
            zones = tuple(int(z) for z in self.operator_zones)
            if len(zones) != self.operators:
                raise ConfigError("operator_zones must list one zone per operator")
            object.__setattr__(self, "operator_zones", zones)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["grid"] = asdict(self.grid)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "ScenarioConfig":
        data = dict(data)
        grid = data.pop("grid", {}) or {}
        if not isinstance(grid, TimeGrid):
            grid = TimeGrid(**grid)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
        for key in ("operator_shifts", "operator_zones"):
            if data.get(key) is not None:
                data[key] = tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in data[key])
        return cls(grid=grid, **data)


@dataclass(frozen=True)
class Event:
    slot: int
    kind: str
    origin: int = -1
    destination: int = -1
    size: int = 1
    arrival_slot: int = -1
    mode: str = ""


@dataclass
class TaskRecord:
    """One executed (or aborted) relocation movement."""

    mode: str
    feeder: int
    receiver: int
    planned: int
    realized: int
    decision_slot: int
    pickup_slot: int
    completion_slot: int
    rebalance_slots: int = 0
    relocation_slots: int = 0
    operator: int = -1


@dataclass
class SimulationTrace:
    config: dict
    day_slots: int
    fleet_size: int
    n_operators: int
    n_requests: int
    events: List[Event] = field(default_factory=list)
    slot_stats: Dict[str, np.ndarray] = field(default_factory=dict)
    plans: List[dict] = field(default_factory=list)
    tasks: List[TaskRecord] = field(default_factory=list)
    solver_times: List[float] = field(default_factory=list)
    key: Tuple = ()

    def count(self, kind: str) -> int:
        return sum(1 for e in self.events if e.kind == kind)

    @property
    def admissions(self) -> int:
        return self.count(ADMIT)

    @property
    def rejections(self) -> int:
        return self.count(REJECT)

    def behaviour(self) -> tuple:
        """Everything the simulated system did, excluding plans and timings."""
        stats = tuple((k, tuple(int(v) for v in self.slot_stats[k])) for k in SLOT_COLUMNS if k in self.slot_stats)
        return tuple(self.events), stats, tuple(tuple(asdict(t).values()) for t in self.tasks)

    def conservation_violations(self) -> List[int]:
        """Slots where parked plus travelling vehicles differ from the fleet, or a zone went negative."""
        parked = self.slot_stats["parked"]
        moving = self.slot_stats["en_route"]
        bad = (parked + moving != self.fleet_size) | (self.slot_stats["min_inventory"] < 0)
        return [int(s) for s in np.flatnonzero(bad)]

    def write_events(self, path: Union[str, Path]) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.events:
                fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")

    def write_plans(self, path: Union[str, Path]) -> None:
        realized: Dict[int, List[dict]] = {}
        for t in self.tasks:
            realized.setdefault(t.decision_slot, []).append(
                {"feeder": t.feeder, "receiver": t.receiver, "operator": t.operator,
                 "planned": t.planned, "realized": t.realized, "mode": t.mode}
            )
        with open(path, "w", encoding="utf-8") as fh:
            for plan in self.plans:
                record = dict(plan, realized=realized.get(plan["slot"], []))
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def write_slot_summary(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(SLOT_COLUMNS)
            n = len(self.slot_stats["slot"])
            for row in range(n):
                writer.writerow([int(self.slot_stats[c][row]) for c in SLOT_COLUMNS])


@dataclass
class _Relocator:
    id: int
    zone: int
    busy_until: int
    shift: Tuple[int, int]
    last_task: int = -1

    def on_shift(self, slot: int) -> bool:
        return self.shift[0] <= slot < self.shift[1]


def compute_en_route_R(state: SystemState, zone: int, grid: TimeGrid, k: int) -> int:
    """Vehicles heading to ``zone`` that arrive before ``k n_C + n_R``."""
    horizon = k * grid.n_C + grid.n_R
    return sum(
        e.train_size
        for slot, entries in state.en_route.items() if slot < horizon
        for e in entries if e.destination == zone
    )


class Simulation:
    """One run: owns the mutable state and the controller."""

    def __init__(self, config: ScenarioConfig, demand: TripLog, network: ServiceNetwork,
                 model: Optional[DemandModel] = None, initial_inventory: Optional[Sequence[int]] = None):
        self.config = config
        self.grid = config.grid
        self.network = network
        self.N = network.N
        self.day_slots = config.day_slots
        self.requests = [r for r in demand.requests if 0 <= r.request_slot < config.day_slots]
        for r in self.requests:
            if not (0 <= r.origin < self.N and 0 <= r.destination < self.N):
                raise ConfigError(f"request zone outside network: {r}")
        if initial_inventory is None:
            initial_inventory = initial_fleet_placement(demand, config.fleet_size, self.N)
        inventory = np.asarray(initial_inventory, dtype=np.int64).copy()
        if inventory.shape != (self.N,) or (inventory < 0).any():
            raise ConfigError("initial inventory must be a non-negative vector over the zones")
        if int(inventory.sum()) != config.fleet_size:
            raise ConfigError(f"initial inventory holds {int(inventory.sum())} vehicles, fleet is {config.fleet_size}")
        if model is None and config.scheme != NONE and config.predictor != EXACT_ORACLE:
            log.warning("no demand model supplied; estimating one from the simulated day itself")
            model = build_demand_model([demand], config.day_slots, self.N)
        self.model = model
        self.state = SystemState(slot=0, inventory=inventory)

        M = config.operators if config.scheme == OPERATOR else 0
        shifts = config.operator_shifts or tuple((0, config.day_slots) for _ in range(M))
        zones = config.operator_zones or tuple(u % self.N for u in range(M))
        for z in zones:
            if not 0 <= z < self.N:
                raise ConfigError(f"operator zone {z} outside network")
        self.relocators = [_Relocator(u, zones[u], 0, shifts[u]) for u in range(M)]

        self.trace = SimulationTrace(
            config=config.to_dict(), day_slots=config.day_slots, fleet_size=config.fleet_size,
            n_operators=M, n_requests=len(self.requests),
        )
        self.pending: Dict[int, List[Tuple[Assignment, int]]] = {}
        self.robot_queue: Dict[int, List[Tuple[int, int, int]]] = {}
        self.live_flows: Dict[Tuple[int, int], int] = {}
        self.live_report: Optional[ImbalanceReport] = None
        self.live_decision = -1
        self.moving = 0
        self.relocating = 0
        self._future = self._future_arrays() if config.predictor == EXACT_ORACLE else None

    # -- prediction --------------------------------------------------------

    def _future_arrays(self):
        n = len(self.requests)
        req = np.fromiter((r.request_slot for r in self.requests), dtype=np.int64, count=n)
        org = np.fromiter((r.origin for r in self.requests), dtype=np.int64, count=n)
        dst = np.fromiter((r.destination for r in self.requests), dtype=np.int64, count=n)
        dur = np.fromiter((max(1, r.duration_slots) for r in self.requests), dtype=np.int64, count=n)
        return req, org, dst, req + dur

    def _pending_adjustments(self, s0: int):
        """Vehicles committed to leave (``out``) or reach (``into``) each zone by open tasks."""
        out = np.zeros(self.N, dtype=np.int64)
        into = np.zeros(self.N, dtype=np.int64)
        into_by_slot: List[Tuple[int, int, int]] = []
        for pickup, items in self.pending.items():
            for a, _ in items:
                out[a.feeder] += a.train_size
                into_by_slot.append((a.completion_slot, a.receiver, a.train_size))
        return out, into_by_slot

    def _imbalance(self, s0: int) -> List[int]:
        grid, cfg = self.grid, self.config
        k = s0 // grid.n_C
        inv = self.state.inventory
        out, incoming = self._pending_adjustments(s0)
        horizon_R = s0 + grid.n_R
        b = []
        if cfg.predictor == WORST_CASE:
            into = np.zeros(self.N, dtype=np.int64)
            for slot, j, p in incoming:
                if slot < horizon_R:
                    into[j] += p
            for i in range(self.N):
                R = compute_en_route_R(self.state, i, grid, k) + into[i]
                C = self.model.expected_requests(i, s0, grid.n_O)
                b.append(worst_case_imbalance(inv[i] - out[i], R, C))
        elif cfg.predictor == PROBABILISTIC:
            # historical arrival histograms already cover passenger drop-offs,
            # so only relocated vehicles on their way are added here
            extra = np.zeros(self.N, dtype=np.int64)
            for slot, entries in self.state.en_route.items():
                if slot < horizon_R:
                    for e in entries:
                        if not e.carries_passenger:
                            extra[e.destination] += e.train_size
            for slot, j, p in incoming:
                if slot < horizon_R:
                    extra[j] += p
            for i in range(self.N):
                f_A, f_C = self.model.window(i, s0, grid.n_O)
                v0 = int(inv[i] - out[i] + extra[i])
                b.append(probabilistic_imbalance(v0, f_A, f_C, cfg.epsilon, grid.n_O))
        else:
            n_O = grid.n_O
            A = np.zeros((self.N, n_O), dtype=np.int64)
            C = np.zeros((self.N, n_O), dtype=np.int64)
            for slot, entries in self.state.en_route.items():
                if s0 <= slot < s0 + n_O:
                    for e in entries:
                        A[e.destination, slot - s0] += e.train_size
            for slot, j, p in incoming:
                if s0 <= slot < s0 + n_O:
                    A[j, slot - s0] += p
            req, org, dst, arr = self._future
            upcoming = (req >= s0) & (req < s0 + n_O)
            np.add.at(C, (org[upcoming], req[upcoming] - s0), 1)
            landing = (req >= s0) & (arr < s0 + n_O)
            np.add.at(A, (dst[landing], arr[landing] - s0), 1)
            for i in range(self.N):
                series = virtual_inventory(int(inv[i] - out[i]), A[i], C[i], n_O)
                b.append(exact_imbalance(series))
        return b

    # -- planning ------------------------------------------------------------

    def _operator_snapshot(self, s0: int) -> List[OperatorState]:
        return [
            OperatorState(
                id=r.id, available=r.on_shift(s0),
                residual_time=max(0, r.busy_until - s0), destination_zone=r.zone,
            )
            for r in self.relocators
        ]

    def _plan(self, s0: int) -> None:
        cfg, grid = self.config, self.grid
        if cfg.scheme == NONE:
            return
        k = s0 // grid.n_C
        started = time.perf_counter()
        report = classify_zones(self._imbalance(s0), cfg.predictor)
        J = utility_matrix(report, self.network, grid)
        flows = solve_relocation_flows(report, J)
        plan = RelocationPlan(decision_index=k, flows=dict(flows))

        if cfg.scheme == OPERATOR:
            plan.tasks = split_into_tasks(flows, cfg.eta)
            snapshot = [op for op in self._operator_snapshot(s0) if op.available]
            plan.assignments = assign_operators(plan.tasks, snapshot, self.network, grid, now=s0)
            self.trace.solver_times.append(time.perf_counter() - started)
            for a in plan.assignments:
                relocator = self.relocators[a.operator]
                record = TaskRecord(
                    mode=OPERATOR, feeder=a.feeder, receiver=a.receiver, planned=a.train_size,
                    realized=0, decision_slot=s0, pickup_slot=a.pickup_slot,
                    completion_slot=a.completion_slot,
                    rebalance_slots=self.network.T_op(relocator.zone, a.feeder),
                    relocation_slots=self.network.T(a.feeder, a.receiver), operator=a.operator,
                )
                self.trace.tasks.append(record)
                self.pending.setdefault(a.pickup_slot, []).append((a, len(self.trace.tasks) - 1))
                relocator.busy_until = a.completion_slot
                relocator.zone = a.receiver
                relocator.last_task = len(self.trace.tasks) - 1
        elif cfg.scheme == USER:
            self.trace.solver_times.append(time.perf_counter() - started)
            self.live_flows = dict(flows)
            self.live_report = report
            self.live_decision = s0
        elif cfg.scheme == ROBOTIC:
            schedule = robotic_rates(flows, self.network, grid, start_slot=s0)
            self.trace.solver_times.append(time.perf_counter() - started)
            plan.robotic_rates = dict(schedule.rates)
            for slot, pairs in schedule.by_slot().items():
                if slot < self.day_slots:
                    self.robot_queue.setdefault(slot, []).extend((i, j, s0) for i, j in pairs)

        self.trace.plans.append({
            "decision_index": k,
            "slot": s0,
            "b": list(report.b),
            "feeders": sorted(report.feeders),
            "receivers": sorted(report.receivers),
            "flows": [[i, j, x] for (i, j), x in sorted(plan.flows.items())],
            "tasks": [[i, j, sizes] for (i, j), sizes in sorted(plan.tasks.items())],
            "assignments": [asdict(a) for a in plan.assignments],
            "robotic_rates": [[i, j, str(r)] for (i, j), r in sorted(plan.robotic_rates.items())],
        })

    # -- execution -----------------------------------------------------------

    def _depart(self, slot: int, origin: int, dest: int, size: int, arrival: int, passenger: bool, mode: str) -> None:
        self.state.add_en_route(EnRoute(dest, arrival, passenger, size))
        self.moving += size
        if not passenger:
            self.relocating += size
            self.trace.events.append(Event(slot, RELOCATION_DEPARTURE, origin, dest, size, arrival, mode))

    def _arrivals(self, slot: int) -> None:
        for e in self.state.en_route.pop(slot, []):
            self.state.inventory[e.destination] += e.train_size
            self.moving -= e.train_size
            if e.carries_passenger:
                self.trace.events.append(Event(slot, TRIP_ARRIVAL, -1, e.destination, e.train_size, slot, "passenger"))
            else:
                self.relocating -= e.train_size
                self.trace.events.append(Event(slot, RELOCATION_ARRIVAL, -1, e.destination, e.train_size, slot))

    def _serve(self, request, slot: int, busy: np.ndarray) -> bool:
        inv = self.state.inventory
        o, d = request.origin, request.destination
        if inv[o] <= 0:
            self.trace.events.append(Event(slot, REJECT, o, d, 1, -1, "passenger"))
            return False
        duration = max(1, request.duration_slots)
        tow = (
            self.config.scheme == USER
            and self.live_report is not None
            and user_based_decide(request, self.live_flows, self.live_report, self.config.gamma, int(inv[o]))
        )
        inv[o] -= 1
        self.trace.events.append(Event(slot, ADMIT, o, d, 1, slot + duration, "passenger"))
        self._depart(slot, o, d, 1, slot + duration, True, "passenger")
        busy[slot] += 1
        busy[min(slot + duration, len(busy) - 1)] -= 1
        if tow:
            inv[o] -= 1
            self._depart(slot, o, d, 1, slot + duration, False, USER)
            self.trace.tasks.append(TaskRecord(
                mode=USER, feeder=o, receiver=d, planned=1, realized=1, decision_slot=self.live_decision,
                pickup_slot=slot, completion_slot=slot + duration, relocation_slots=duration,
            ))
        return True

    def _operator_pickups(self, slot: int) -> None:
        inv = self.state.inventory
        for a, ref in self.pending.pop(slot, []):
            record = self.trace.tasks[ref]
            size = int(min(a.train_size, inv[a.feeder]))
            record.realized = size
            if size > 0:
                inv[a.feeder] -= size
                self._depart(slot, a.feeder, a.receiver, size, a.completion_slot, False, OPERATOR)
                continue
            self.trace.events.append(Event(slot, TASK_ABORTED, a.feeder, a.receiver, 0, -1, OPERATOR))
            record.completion_slot = slot
            relocator = self.relocators[a.operator]
            if relocator.last_task == ref:
                relocator.busy_until = slot
                relocator.zone = a.feeder

    def _robot_dispatches(self, slot: int) -> None:
        inv = self.state.inventory
        for i, j, decided in self.robot_queue.pop(slot, []):
            if inv[i] <= 0:
                continue
            inv[i] -= 1
            travel = self.network.T(i, j)
            arrival = slot + max(1, travel)
            self._depart(slot, i, j, 1, arrival, False, ROBOTIC)
            self.trace.tasks.append(TaskRecord(
                mode=ROBOTIC, feeder=i, receiver=j, planned=1, realized=1, decision_slot=decided,
                pickup_slot=slot, completion_slot=arrival, relocation_slots=max(1, travel),
            ))

    def run(self) -> SimulationTrace:
        grid = self.grid
        requests = self.requests
        n_req = len(requests)
        ptr = 0
        busy = np.zeros(self.day_slots + max((r.duration_slots for r in requests), default=1) + 2, dtype=np.int64)
        rows: Dict[str, List[int]] = {c: [] for c in SLOT_COLUMNS}
        slot = 0
        while True:
            in_day = slot < self.day_slots
            if not in_day and not self.state.en_route and not self.pending:
                break
            if in_day and slot % grid.n_C == 0:
                self._plan(slot)
            self._arrivals(slot)
            admitted = rejected = 0
            while ptr < n_req and requests[ptr].request_slot == slot:
                if self._serve(requests[ptr], slot, busy):
                    admitted += 1
                else:
                    rejected += 1
                ptr += 1
            self._operator_pickups(slot)
            if in_day:
                self._robot_dispatches(slot)

            rows["slot"].append(slot)
            rows["admissions"].append(admitted)
            rows["rejections"].append(rejected)
            rows["relocations_inflight"].append(self.relocating)
            rows["idle_operators"].append(
                sum(1 for r in self.relocators if r.on_shift(slot) and r.busy_until <= slot)
            )
            rows["parked"].append(int(self.state.inventory.sum()))
            rows["en_route"].append(self.moving)
            rows["min_inventory"].append(int(self.state.inventory.min()) if self.N else 0)
            slot += 1
            self.state.slot = slot

        busy_per_slot = np.cumsum(busy)[: len(rows["slot"])]
        if len(busy_per_slot) < len(rows["slot"]):
            busy_per_slot = np.pad(busy_per_slot, (0, len(rows["slot"]) - len(busy_per_slot)))
        self.trace.slot_stats = {c: np.asarray(v, dtype=np.int64) for c, v in rows.items()}
        self.trace.slot_stats["busy_vehicles"] = busy_per_slot.astype(np.int64)
        return self.trace


def run(config: ScenarioConfig, demand: TripLog, network: ServiceNetwork,
        model: Optional[DemandModel] = None, initial_inventory: Optional[Sequence[int]] = None) -> SimulationTrace:
    """Simulate one day of ``demand`` under ``config``; deterministic for fixed inputs."""
    return Simulation(config, demand, network, model, initial_inventory).run()


def _replicate_one(args) -> SimulationTrace:
    config, day, seed, trip_log, network, model, initial = args
    trace = run(replace(config, seed=seed), resample_willingness(trip_log, seed), network, model, initial)
    trace.key = (day, seed)
    return trace


def replicate(config: ScenarioConfig, demand: Union[Mapping[object, TripLog], Sequence[TripLog]],
              seeds: Sequence[int], network: ServiceNetwork, model: Optional[DemandModel] = None,
              initial_inventory: Optional[Sequence[int]] = None, parallel: int = 1) -> List[SimulationTrace]:
    """One run per (day, seed) pair, returned in day-major, seed-minor order.

    Each run re-draws customer willingness from its seed; everything else is
    fixed by the inputs.
    """
    if not isinstance(demand, Mapping):
        demand = {trip_log.day if trip_log.day is not None else n: trip_log for n, trip_log in enumerate(demand)}
    jobs = [
        (config, day, seed, trip_log, network, model, initial_inventory)
        for day, trip_log in demand.items() for seed in seeds
    ]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_replicate_one, jobs))
    return [_replicate_one(job) for job in jobs]
