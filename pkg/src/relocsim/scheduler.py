"""Turning relocation flows into concrete actions: relocators, customers or robots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, List, Mapping, MutableMapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Assignment, OperatorState, ServiceNetwork, TimeGrid, TripRequest
from .predictor import ImbalanceReport

Tasks = Mapping[Tuple[int, int], Sequence[int]]


# ---------------------------------------------------------------------------
# Operator-based scheme
# ---------------------------------------------------------------------------

def _flat_tasks(tasks: Tasks) -> List[Tuple[int, int, int, int]]:
    return [(i, j, l, p) for (i, j), sizes in sorted(tasks.items()) for l, p in enumerate(sizes)]


def _scaled_weight(op: OperatorState, i: int, j: int, p: int, network: ServiceNetwork, grid: TimeGrid) -> Optional[int]:
    """``n_R`` times the assignment utility, or None when the pair is infeasible.

    Scaling by ``n_R`` keeps the objective in integers so optima compare exactly.
    """
    if not op.available:
        return None
    reach = op.residual_time + network.T_op(op.destination_zone, i)
    if reach + network.T(i, j) > grid.n_R:
        return None
    return grid.n_R * p - reach


def _make_assignment(op: OperatorState, task, network: ServiceNetwork, now: int) -> Assignment:
    i, j, l, p = task
    pickup = now + op.residual_time + network.T_op(op.destination_zone, i)
    return Assignment(
        operator=op.id, feeder=i, receiver=j, task_index=l, train_size=p,
        start_slot=now, pickup_slot=pickup, completion_slot=pickup + network.T(i, j),
    )


def assignment_objective(assignments: Sequence[Assignment], operators: Sequence[OperatorState],
                         network: ServiceNetwork, grid: TimeGrid) -> Fraction:
    """Exact value of ``sum (p - (a_u + T_op(s_u, i)) / n_R)`` over ``assignments``."""
    by_id = {op.id: op for op in operators}
    total = 0
    for a in assignments:
        op = by_id[a.operator]
        total += grid.n_R * a.train_size - op.residual_time - network.T_op(op.destination_zone, a.feeder)
    return Fraction(total, grid.n_R)


def assign_operators(tasks: Tasks, operators: Sequence[OperatorState], network: ServiceNetwork,
                     grid: TimeGrid, now: int = 0) -> List[Assignment]:
    """Maximum-utility matching of available relocators to train tasks.

    Each relocator takes at most one task and each task at most one
    relocator; a pair is admissible only if the relocator can reach the
    feeder and deliver the train within ``n_R`` slots. Unmatched tasks are
    dropped for this interval.
    """
    flat = _flat_tasks(tasks)
    if not flat or not operators:
        return []
    weights = np.zeros((len(operators), len(flat)), dtype=np.int64)
    feasible = np.zeros_like(weights, dtype=bool)
    for r, op in enumerate(operators):
        for c, (i, j, _, p) in enumerate(flat):
            w = _scaled_weight(op, i, j, p, network, grid)
            if w is not None:
                weights[r, c] = w
                feasible[r, c] = True
    if not feasible.any():
        return []
    # feasible weights are >= 0, so padding infeasible cells with 0 and
    # discarding them afterwards leaves the optimum unchanged
    rows, cols = linear_sum_assignment(weights, maximize=True)
    out = [
        _make_assignment(operators[r], flat[c], network, now)
        for r, c in zip(rows, cols)
        if feasible[r, c]
    ]
    return sorted(out, key=lambda a: (a.feeder, a.receiver, a.task_index))


def brute_force_assignment(tasks: Tasks, operators: Sequence[OperatorState], network: ServiceNetwork,
                           grid: TimeGrid, now: int = 0) -> Tuple[List[Assignment], Fraction]:
    """Exhaustive search over all injective partial assignments (test oracle)."""
    flat = _flat_tasks(tasks)
    weight = [[_scaled_weight(op, i, j, p, network, grid) for (i, j, _, p) in flat] for op in operators]
    best_value = 0
    best_choice: Tuple[int, ...] = ()

    def search(r: int, used: int, value: int, choice: Tuple[int, ...]) -> None:
        nonlocal best_value, best_choice
        if r == len(operators):
            if value > best_value:
                best_value, best_choice = value, choice
            return
        search(r + 1, used, value, choice + (-1,))
        for c in range(len(flat)):
            w = weight[r][c]
            if w is not None and not used >> c & 1:
                search(r + 1, used | (1 << c), value + w, choice + (c,))

    search(0, 0, 0, ())
    chosen = [
        _make_assignment(operators[r], flat[c], network, now)
        for r, c in enumerate(best_choice) if c >= 0
    ]
    return chosen, Fraction(best_value, grid.n_R)


def check_assignments(assignments: Sequence[Assignment], tasks: Tasks, operators: Sequence[OperatorState],
                      network: ServiceNetwork, grid: TimeGrid) -> List[str]:
    """Structural violations: double use of a relocator or task, or a late delivery."""
    problems = []
    by_id = {op.id: op for op in operators}
    seen_ops, seen_tasks = set(), set()
    for a in assignments:
        op = by_id.get(a.operator)
        if op is None or not op.available:
            problems.append(f"operator {a.operator} not available")
            continue
        if a.operator in seen_ops:
            problems.append(f"operator {a.operator} assigned twice")
        key = (a.feeder, a.receiver, a.task_index)
        if key in seen_tasks:
            problems.append(f"task {key} assigned twice")
        seen_ops.add(a.operator)
        seen_tasks.add(key)
        sizes = tasks.get((a.feeder, a.receiver), ())
        if a.task_index >= len(sizes):
            problems.append(f"task {key} does not exist")
        span = op.residual_time + network.T_op(op.destination_zone, a.feeder) + network.T(a.feeder, a.receiver)
        if span > grid.n_R:
            problems.append(f"task {key} by operator {a.operator} takes {span} > n_R={grid.n_R}")
    return problems


def update_operator_state(op: OperatorState, assignment: Optional[Assignment], network: ServiceNetwork,
                          grid: TimeGrid) -> OperatorState:
    """Residual time and destination of ``op`` at the next decision point."""
    if assignment is None:
        return replace(op, residual_time=max(0, op.residual_time - grid.n_C))
    i, j = assignment.feeder, assignment.receiver
    busy = op.residual_time + network.T_op(op.destination_zone, i) + network.T(i, j)
    return replace(op, residual_time=max(0, busy - grid.n_C), destination_zone=j)


# ---------------------------------------------------------------------------
# User-based scheme
# ---------------------------------------------------------------------------

def customer_accepts(willingness: float, gamma: float) -> bool:
    """A customer accepts with probability ``gamma``: their uniform draw falls below it."""
    return gamma >= 1.0 or willingness < gamma


def user_based_decide(request: TripRequest, live_flows: MutableMapping[Tuple[int, int], int],
                      report: ImbalanceReport, gamma: float, available_at_origin: int) -> bool:
    """Whether this customer tows one extra vehicle to their destination.

    ``available_at_origin`` counts vehicles before the customer's own car is
    taken. A positive answer consumes one unit of the live flow.
    """
    i, j = request.origin, request.destination
    if i not in report.feeders or j not in report.receivers:
        return False
    if live_flows.get((i, j), 0) <= 0 or available_at_origin < 2:
        return False
    if not customer_accepts(request.customer_willingness, gamma):
        return False
    live_flows[(i, j)] -= 1
    return True


# ---------------------------------------------------------------------------
# Robotic scheme
# ---------------------------------------------------------------------------

@dataclass
class RoboticSchedule:
    """Relocation rates per pair and the resulting dispatch slots in one interval."""

    start_slot: int
    rates: Dict[Tuple[int, int], Fraction] = field(default_factory=dict)
    dispatches: Dict[Tuple[int, int], List[int]] = field(default_factory=dict)

    def by_slot(self) -> Dict[int, List[Tuple[int, int]]]:
        out: Dict[int, List[Tuple[int, int]]] = {}
        for pair, slots in sorted(self.dispatches.items()):
            for s in slots:
                out.setdefault(s, []).append(pair)
        return out


def robotic_rates(flows: Mapping[Tuple[int, int], int], network: ServiceNetwork, grid: TimeGrid,
                  start_slot: int = 0) -> RoboticSchedule:
    """Constant relocation rate ``x / (n_R - T(i, j))`` per pair.

    The m-th vehicle of a pair leaves at the end of slot ``ceil(m / rate)``
    of the interval, i.e. at ``start_slot + ceil(m / rate) - 1``. Dispatches
    stop at the end of the interval or once ``x`` vehicles have been sent.
    """
    schedule = RoboticSchedule(start_slot=start_slot)
    for (i, j), x in sorted(flows.items()):
        if x <= 0:
            continue
        window = grid.n_R - network.T(i, j)
        if window <= 0:
            continue
        rate = Fraction(x, window)
        schedule.rates[(i, j)] = rate
        slots = []
        m = 1
        while m <= x:
            offset = math.ceil(m / rate)
            if offset > grid.n_C:
                break
            slots.append(start_slot + offset - 1)
            m += 1
        schedule.dispatches[(i, j)] = slots
    return schedule
