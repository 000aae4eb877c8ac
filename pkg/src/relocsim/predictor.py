"""Inventory-imbalance estimation: exact, worst-case and Markov-chain estimators."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Sequence

import numpy as np

WORST_CASE = "worst-case"
PROBABILISTIC = "probabilistic"
EXACT_ORACLE = "exact-oracle"
ESTIMATORS = (WORST_CASE, PROBABILISTIC, EXACT_ORACLE)


@dataclass(frozen=True)
class ImbalanceReport:
    """Signed imbalance per zone with the derived feeder/receiver sets."""

    b: tuple
    estimator: str = WORST_CASE
    feeders: FrozenSet[int] = field(init=False)
    receivers: FrozenSet[int] = field(init=False)

    def __post_init__(self) -> None:
        b = tuple(int(v) for v in self.b)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "feeders", frozenset(i for i, v in enumerate(b) if v > 0))
        object.__setattr__(self, "receivers", frozenset(i for i, v in enumerate(b) if v < 0))


def classify_zones(b: Sequence[int], estimator: str = WORST_CASE) -> ImbalanceReport:
    return ImbalanceReport(tuple(b), estimator)


# ---------------------------------------------------------------------------
# Deterministic estimators
# ---------------------------------------------------------------------------

def virtual_inventory(v0: int, arrivals: Sequence[int], requests: Sequence[int], n_O: int) -> np.ndarray:
    """Inventory after each of the ``n_O`` slots if every request were served."""
    arrivals = np.asarray(arrivals, dtype=np.int64)
    requests = np.asarray(requests, dtype=np.int64)
    if arrivals.shape != (n_O,) or requests.shape != (n_O,):
        raise ValueError(
            f"arrival/request series must have length n_O={n_O}, "
            f"got {arrivals.shape} and {requests.shape}"
        )
    return v0 + np.cumsum(arrivals - requests)


def exact_imbalance(inventory: Sequence[int]) -> int:
    if len(inventory) == 0:
        raise ValueError("empty inventory series")
    return int(np.min(inventory))


def worst_case_imbalance(v: float, R: float, C: float) -> int:
    """Conservative imbalance ``v + R - C``; expected passenger arrivals are ignored.

    ``C`` may be a fractional expectation; the result is rounded down so that
    the estimate stays on the cautious side.
    """
    return int(np.floor(v + R - C + 1e-9))


# ---------------------------------------------------------------------------
# Markov-chain estimator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pmf:
    """Probability mass on the integers ``low, low + 1, ..., low + len(probs) - 1``."""

    low: int
    probs: np.ndarray

    @property
    def high(self) -> int:
        return self.low + len(self.probs) - 1

    def as_dict(self, tol: float = 0.0) -> Dict[int, float]:
        return {self.low + n: float(p) for n, p in enumerate(self.probs) if p > tol}

    def mass_below(self, threshold: int) -> float:
        """``Pr{value < threshold}``."""
        cut = threshold - self.low
        if cut <= 0:
            return 0.0
        return float(self.probs[:cut].sum())


def _as_pmf_array(dist) -> np.ndarray:
    if isinstance(dist, Mapping):
        size = max(dist) + 1 if dist else 1
        out = np.zeros(size)
        for n, p in dist.items():
            out[n] = p
        return out
    return np.asarray(dist, dtype=float)


def delta_distribution(f_A, f_C) -> Pmf:
    """Distribution of arrivals minus requests in one slot.

    ``f_A[n]`` and ``f_C[m]`` are independent count distributions; the result
    lives on ``[-beta_C, beta_V]``.
    """
    a = _as_pmf_array(f_A)
    c = _as_pmf_array(f_C)
    return Pmf(low=-(len(c) - 1), probs=np.convolve(a, c[::-1]))


@dataclass(frozen=True)
class InventoryChain:
    """Marginal distributions of the virtual inventory for slots 1..n_O."""

    v0: int
    slots: tuple

    @property
    def n_O(self) -> int:
        return len(self.slots)

    def at(self, t: int) -> Pmf:
        """Distribution after slot ``t`` (1-based)."""
        return self.slots[t - 1]


def propagate_inventory_chain(v0: int, deltas: Sequence[Pmf], n_O: int) -> InventoryChain:
    """Forward the inventory distribution through ``n_O`` per-slot increments."""
    if n_O < 1:
        raise ValueError("n_O must be >= 1")
    if len(deltas) < n_O:
        raise ValueError(f"need {n_O} increment distributions, got {len(deltas)}")
    current = Pmf(low=v0, probs=np.ones(1))
    out = []
    for t in range(n_O):
        d = deltas[t]
        current = Pmf(low=current.low + d.low, probs=np.convolve(current.probs, d.probs))
        out.append(current)
    return InventoryChain(v0=v0, slots=tuple(out))


def shortage_probability(chain: InventoryChain, shift: int = 0) -> float:
    """Shortage score: negative-inventory mass summed over every slot.

    ``shift`` re-targets the chain to the initial inventory ``chain.v0 + shift``
    (the increments do not depend on the starting level).
    """
    return float(sum(pmf.mass_below(-shift) for pmf in chain.slots))


def shortage_curve(chain: InventoryChain, levels: Sequence[int]) -> np.ndarray:
    """Shortage score for each initial inventory in ``levels`` at once.

    Entry ``n`` equals ``shortage_probability(chain, levels[n] - chain.v0)``.
    """
    levels = np.asarray(levels, dtype=np.int64)
    total = np.zeros(len(levels))
    for pmf in chain.slots:
        cdf = np.concatenate(([0.0], np.cumsum(pmf.probs)))
        # mass strictly below v0 - v on a support starting at pmf.low
        cut = np.clip(chain.v0 - levels - pmf.low, 0, len(pmf.probs))
        total += cdf[cut]
    return total


def chain_from_histograms(v0: int, f_A_slots: Sequence, f_C_slots: Sequence, n_O: int) -> InventoryChain:
    deltas = [delta_distribution(a, c) for a, c in zip(f_A_slots, f_C_slots)]
    return propagate_inventory_chain(v0, deltas, n_O)


def probabilistic_imbalance(
    v0: int,
    f_A_slots: Sequence,
    f_C_slots: Sequence,
    epsilon: float = 0.05,
    n_O: int = None,
) -> int:
    """Imbalance from the shortage score of the inventory chain.

    Receiver (score > 0 at ``v0``): minus the fewest extra vehicles that bring
    the score to ``<= epsilon``. Feeder (score == 0): the most vehicles that
    can be taken away, capped at ``v0``, keeping the score ``<= epsilon``.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if n_O is None:
        n_O = len(f_C_slots)
    chain = chain_from_histograms(0, f_A_slots, f_C_slots, n_O)
    beta_C = max(len(_as_pmf_array(c)) - 1 for c in f_C_slots[:n_O])
    # F(v) == 0 for every v >= beta_C * n_O, so this range covers the whole search
    low = min(v0, 0)
    top = max(beta_C * n_O, v0)
    table = shortage_curve(chain, range(low, top + 1))

    def F(v: int) -> float:
        return float(table[v - low])

    if F(v0) > 0:
        return -next(x for x in range(0, top - v0 + 1) if F(v0 + x) <= epsilon)
    b = 0
    for x in range(1, max(v0, 0) + 1):
        if F(v0 - x) > epsilon:
            break
        b = x
    return b


def shortage_probability_monte_carlo(
    v0: int, f_A_slots: Sequence, f_C_slots: Sequence, samples: int, rng: np.random.Generator
) -> float:
    """Sample-path estimate of the shortage score (independent of the chain)."""
    n_O = len(f_C_slots)
    level = np.full(samples, v0, dtype=np.int64)
    negative_slots = np.zeros(samples, dtype=np.int64)
    for t in range(n_O):
        a = _as_pmf_array(f_A_slots[t])
        c = _as_pmf_array(f_C_slots[t])
        level += rng.choice(len(a), size=samples, p=a / a.sum())
        level -= rng.choice(len(c), size=samples, p=c / c.sum())
        negative_slots += level < 0
    return float(negative_slots.mean())
