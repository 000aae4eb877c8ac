"""Random small instances and exhaustive cross-checks for the two optimisation stages."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from .core import OperatorState, ServiceNetwork, TimeGrid
from .flows import brute_force_flows, check_flows, flow_objective, solve_relocation_flows, utility_matrix
from .predictor import ImbalanceReport, classify_zones
from .scheduler import assign_operators, assignment_objective, brute_force_assignment, check_assignments


@dataclass
class OracleResult:
    name: str
    instances: int
    mismatches: List[str]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def random_flow_instance(rng: np.random.Generator, grid: TimeGrid, max_side: int = 4, max_b: int = 3,
                         max_travel: int = None) -> Tuple[ImbalanceReport, ServiceNetwork]:
    """Up to ``max_side`` feeders and receivers with ``|b| <= max_b`` and travel times up to ``n_R``."""
    n_f = int(rng.integers(0, max_side + 1))
    n_r = int(rng.integers(0, max_side + 1))
    n_zero = int(rng.integers(0, 3))
    b = [int(rng.integers(1, max_b + 1)) for _ in range(n_f)]
    b += [-int(rng.integers(1, max_b + 1)) for _ in range(n_r)]
    b += [0] * n_zero
    b = [b[k] for k in rng.permutation(len(b))] or [0]
    N = len(b)
    top = grid.n_R if max_travel is None else max_travel
    T = rng.integers(1, top + 1, size=(N, N))
    return classify_zones(b), ServiceNetwork(zones=tuple(range(N)), travel_time=T)


def random_assignment_instance(rng: np.random.Generator, grid: TimeGrid, max_ops: int = 6, max_tasks: int = 6,
                               eta: int = 7):
    """Random tasks, relocators and travel times sized for exhaustive search."""
    N = int(rng.integers(2, 7))
    T = rng.integers(1, grid.n_R // 2 + 1, size=(N, N))
    n_tasks = int(rng.integers(0, max_tasks + 1))
    tasks: Dict[Tuple[int, int], List[int]] = {}
    for _ in range(n_tasks):
        i, j = (int(v) for v in rng.choice(N, size=2, replace=False))
        tasks.setdefault((i, j), []).append(int(rng.integers(1, eta + 1)))
    ops = [
        OperatorState(
            id=u,
            available=bool(rng.random() < 0.85),
            residual_time=int(rng.integers(0, grid.n_R // 2 + 1)) if rng.random() < 0.5 else 0,
            destination_zone=int(rng.integers(0, N)),
        )
        for u in range(int(rng.integers(0, max_ops + 1)))
    ]
    return tasks, ops, ServiceNetwork(zones=tuple(range(N)), travel_time=T)


def flow_oracle_check(instances: int = 200, seed: int = 0, grid: TimeGrid = None) -> OracleResult:
    grid = grid or TimeGrid(1.0, 15, 30, 45)
    rng = np.random.default_rng(seed)
    mismatches = []
    for n in range(instances):
        report, network = random_flow_instance(rng, grid)
        J = utility_matrix(report, network, grid)
        flows = solve_relocation_flows(report, J)
        _, best = brute_force_flows(report, J)
        got = flow_objective(flows, J)
        problems = check_flows(report, flows)
        if got != best or problems:
            mismatches.append(f"instance {n}: b={list(report.b)} solver={got} oracle={best} {problems}")
    return OracleResult("flows", instances, mismatches)


def assignment_oracle_check(instances: int = 200, seed: int = 0, grid: TimeGrid = None) -> OracleResult:
    grid = grid or TimeGrid(1.0, 15, 30, 45)
    rng = np.random.default_rng(seed)
    mismatches = []
    for n in range(instances):
        tasks, ops, network = random_assignment_instance(rng, grid)
        got = assign_operators(tasks, ops, network, grid)
        _, best = brute_force_assignment(tasks, ops, network, grid)
        value = assignment_objective(got, ops, network, grid)
        problems = check_assignments(got, tasks, ops, network, grid)
        if value != best or problems:
            mismatches.append(f"instance {n}: solver={value} oracle={best} {problems}")
    return OracleResult("assignments", instances, mismatches)
