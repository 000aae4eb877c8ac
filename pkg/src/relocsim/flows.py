"""Selection of integer relocation flows between feeders and receivers."""

from __future__ import annotations

import heapq
import json
import math
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import RelocsimError, ServiceNetwork, TimeGrid
from .predictor import ImbalanceReport

Flows = Dict[Tuple[int, int], int]

ORACLE_LIMIT = 10**7


class OracleTooLarge(RelocsimError):
    """Instance too big for exhaustive enumeration."""


def utility_matrix(report: ImbalanceReport, network: ServiceNetwork, grid: TimeGrid) -> np.ndarray:
    """Per-vehicle utility ``n_R - T(i, j)`` for feeder->receiver pairs, ``-n_R`` elsewhere."""
    N = network.N
    if len(report.b) != N:
        raise ValueError(f"report covers {len(report.b)} zones, network has {N}")
    J = np.full((N, N), -grid.n_R, dtype=np.int64)
    for i in report.feeders:
        for j in report.receivers:
            J[i, j] = grid.n_R - network.T(i, j)
    return J


def flow_objective(flows: Mapping[Tuple[int, int], int], J: np.ndarray) -> int:
    return int(sum(int(J[i, j]) * x for (i, j), x in flows.items()))


def solve_relocation_flows(report: ImbalanceReport, J: np.ndarray) -> Flows:
    """Optimal integer flows for the feeder/receiver transportation problem.

    Maximises ``sum J[i, j] x[i, j]`` with feeder supplies ``b_i`` and
    receiver demands ``-b_j``. Only pairs with ``J > 0`` carry flow. Solved as
    a min-cost flow by successive shortest paths (Dijkstra on reduced costs),
    stopping once no augmenting path has negative cost. Arcs are laid out in
    ``(i, j)`` order, which makes tie-breaking deterministic.
    """
    pairs = [
        (i, j) for i in sorted(report.feeders) for j in sorted(report.receivers) if J[i, j] > 0
    ]
    if not pairs:
        return {}
    feeders = sorted({i for i, _ in pairs})
    receivers = sorted({j for _, j in pairs})

    # node ids: 0 source, 1..F feeders, F+1..F+R receivers, F+R+1 sink
    F, R = len(feeders), len(receivers)
    source, sink = 0, F + R + 1
    fnode = {i: 1 + n for n, i in enumerate(feeders)}
    rnode = {j: 1 + F + n for n, j in enumerate(receivers)}
    head: List[int] = []
    cap: List[int] = []
    cost: List[int] = []
    adj: List[List[int]] = [[] for _ in range(sink + 1)]

    def add_arc(u: int, v: int, capacity: int, c: int) -> int:
        adj[u].append(len(head))
        head.append(v); cap.append(capacity); cost.append(c)
        adj[v].append(len(head))
        head.append(u); cap.append(0); cost.append(-c)
        return len(head) - 2

    for i in feeders:
        add_arc(source, fnode[i], report.b[i], 0)
    pair_arc = {}
    for i, j in pairs:
        big = min(report.b[i], -report.b[j])
        pair_arc[(i, j)] = add_arc(fnode[i], rnode[j], big, -int(J[i, j]))
    for j in receivers:
        add_arc(rnode[j], sink, -report.b[j], 0)

    # Initial potentials are exact shortest distances on the acyclic start graph,
    # so every reduced cost is non-negative and Dijkstra applies from here on.
    n_nodes = sink + 1
    potential = [0] * n_nodes
    for i, j in pairs:
        potential[rnode[j]] = min(potential[rnode[j]], -int(J[i, j]))
    potential[sink] = min(potential[rnode[j]] for j in receivers)

    while True:
        dist = [math.inf] * n_nodes
        via = [-1] * n_nodes
        done = [False] * n_nodes
        dist[source] = 0
        heap = [(0, source)]
        while heap:
            d, u = heapq.heappop(heap)
            if done[u]:
                continue
            done[u] = True
            for a in adj[u]:
                v = head[a]
                if cap[a] <= 0 or done[v]:
                    continue
                nd = d + cost[a] + potential[u] - potential[v]
                if nd < dist[v]:
                    dist[v] = nd
                    via[v] = a
                    heapq.heappush(heap, (nd, v))
        if dist[sink] == math.inf:
            break
        path_cost = dist[sink] + potential[sink] - potential[source]
        if path_cost >= 0:
            break
        for v in range(n_nodes):
            potential[v] += min(dist[v], dist[sink])
        push = math.inf
        v = sink
        while v != source:
            a = via[v]
            push = min(push, cap[a])
            v = head[a ^ 1]
        v = sink
        while v != source:
            a = via[v]
            cap[a] -= push
            cap[a ^ 1] += push
            v = head[a ^ 1]

    flows = {}
    for pair, a in pair_arc.items():
        sent = cap[a ^ 1]
        if sent > 0:
            flows[pair] = sent
    return flows


def brute_force_flows(report: ImbalanceReport, J: np.ndarray, limit: int = ORACLE_LIMIT) -> Tuple[Flows, int]:
    """Exhaustive optimum over every feasible integer flow matrix.

    Enumerates, feeder by feeder, every split of its supply across all
    receivers (whatever the sign of ``J``), memoising on the receivers'
    remaining capacities. Test oracle only.
    """
    feeders = sorted(report.feeders)
    receivers = sorted(report.receivers)
    # memoised work: (reachable capacity states) x (splits tried per feeder)
    caps0 = [-report.b[j] for j in receivers]
    states = int(np.prod([c + 1 for c in caps0])) if caps0 else 1
    size = sum(states * int(np.prod([min(report.b[i], c) + 1 for c in caps0])) for i in feeders)
    if size > limit:
        raise OracleTooLarge(f"{size} combinations exceed the oracle limit {limit}")
    if not feeders or not receivers:
        return {}, 0

    def splits(total: int, caps: Tuple[int, ...]):
        if not caps:
            yield ()
            return
        for x in range(0, min(total, caps[0]) + 1):
            for rest in splits(total - x, caps[1:]):
                yield (x,) + rest

    @lru_cache(maxsize=None)
    def best(n: int, caps: Tuple[int, ...]) -> Tuple[int, Tuple[Tuple[int, ...], ...]]:
        if n == len(feeders):
            return 0, ()
        i = feeders[n]
        top_value, top_rows = None, ()
        for row in splits(report.b[i], caps):
            gain = sum(int(J[i, j]) * x for j, x in zip(receivers, row))
            rest_value, rest_rows = best(n + 1, tuple(c - x for c, x in zip(caps, row)))
            if top_value is None or gain + rest_value > top_value:
                top_value, top_rows = gain + rest_value, (row,) + rest_rows
        return top_value, top_rows

    value, rows = best(0, tuple(-report.b[j] for j in receivers))
    flows = {
        (i, j): x
        for i, row in zip(feeders, rows)
        for j, x in zip(receivers, row)
        if x > 0
    }
    return flows, value


def check_flows(report: ImbalanceReport, flows: Mapping[Tuple[int, int], int]) -> List[str]:
    """Feasibility violations of ``flows`` against the report's supplies and demands."""
    problems = []
    out: Dict[int, int] = {}
    into: Dict[int, int] = {}
    for (i, j), x in flows.items():
        if x < 0 or int(x) != x:
            problems.append(f"flow {(i, j)} = {x} is not a non-negative integer")
        if x and (i not in report.feeders or j not in report.receivers):
            problems.append(f"flow {(i, j)} is not feeder->receiver")
        out[i] = out.get(i, 0) + x
        into[j] = into.get(j, 0) + x
    for i, total in out.items():
        if total > max(report.b[i], 0):
            problems.append(f"feeder {i} sends {total} > b={report.b[i]}")
    for j, total in into.items():
        if total > max(-report.b[j], 0):
            problems.append(f"receiver {j} gets {total} > -b={-report.b[j]}")
    return problems


def split_into_tasks(flows: Mapping[Tuple[int, int], int], eta: int) -> Dict[Tuple[int, int], List[int]]:
    """Cut each flow into ``ceil(x / eta)`` trains, full ones first."""
    if eta < 1:
        raise ValueError("eta must be >= 1")
    tasks = {}
    for pair, x in sorted(flows.items()):
        if x <= 0:
            continue
        full, rest = divmod(x, eta)
        tasks[pair] = [eta] * full + ([rest] if rest else [])
    return tasks


def instance_record(decision_slot: int, report: ImbalanceReport, J: np.ndarray, flows: Flows) -> str:
    """One JSON line describing a solved instance, for debugging dumps."""
    pairs = [(i, j) for i in sorted(report.feeders) for j in sorted(report.receivers)]
    return json.dumps(
        {
            "slot": decision_slot,
            "b": list(report.b),
            "J": {f"{i},{j}": int(J[i, j]) for i, j in pairs},
            "x": {f"{i},{j}": x for (i, j), x in sorted(flows.items())},
        },
        sort_keys=True,
    )
