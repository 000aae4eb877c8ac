import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relocsim.predictor import (
    EXACT_ORACLE,
    PROBABILISTIC,
    Pmf,
    chain_from_histograms,
    classify_zones,
    delta_distribution,
    exact_imbalance,
    probabilistic_imbalance,
    propagate_inventory_chain,
    shortage_curve,
    shortage_probability,
    virtual_inventory,
    worst_case_imbalance,
)


def random_pmf(rng, beta):
    p = rng.random(beta + 1)
    return p / p.sum()


@pytest.mark.parametrize("v0,A,C,expected", [
    (2, [1, 0, 1], [0, 2, 0], [3, 1, 2]),
    (2, [0, 0, 0], [0, 0, 0], [2, 2, 2]),
    (0, [0, 0], [1, 1], [-1, -2]),
])
def test_virtual_inventory(v0, A, C, expected):
    assert virtual_inventory(v0, A, C, len(A)).tolist() == expected


def test_virtual_inventory_length_mismatch():
    with pytest.raises(ValueError):
        virtual_inventory(0, [1, 2], [1], 2)


def test_exact_imbalance():
    assert exact_imbalance([3, 1, 2]) == 1
    assert exact_imbalance([-1, -2]) == -2
    with pytest.raises(ValueError):
        exact_imbalance([])


def test_exact_imbalance_depends_on_order():
    # four arrivals and four requests around two parked vehicles
    A_first, C_first = [1, 1, 1, 1, 0, 0, 0, 0], [0, 0, 0, 0, 1, 1, 1, 1]
    feeder = exact_imbalance(virtual_inventory(2, A_first, C_first, 8))
    receiver = exact_imbalance(virtual_inventory(2, C_first, A_first, 8))
    assert feeder > 0 and receiver < 0


@settings(max_examples=1000, deadline=None)
@given(st.integers(-5, 20), st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=30))
def test_exact_imbalance_prefix_min_oracle(v0, series):
    A = [a for a, _ in series]
    C = [c for _, c in series]
    level, lowest = v0, None
    for a, c in series:
        level = level + a - c
        lowest = level if lowest is None else min(lowest, level)
    assert exact_imbalance(virtual_inventory(v0, A, C, len(series))) == lowest


@pytest.mark.parametrize("v,R,C,b", [(5, 2, 4, 3), (0, 0, 3, -3), (1, 1, 2, 0)])
def test_worst_case(v, R, C, b):
    assert worst_case_imbalance(v, R, C) == b
    assert classify_zones([b]).feeders == (frozenset({0}) if b > 0 else frozenset())


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 80))
def test_worst_case_identity(v, R, C):
    assert worst_case_imbalance(v, R, C) == v + R - C


def test_worst_case_is_conservative():
    # all requests come before the arrivals that R does not cover
    v, R = 3, 2
    C = [1, 1, 1, 1, 1, 1, 0, 0]
    en_route = [1, 1, 0, 0, 0, 0, 0, 0]
    passenger = [0, 0, 0, 0, 0, 0, 2, 3]
    A = [e + p for e, p in zip(en_route, passenger)]
    exact = exact_imbalance(virtual_inventory(v, A, C, 8))
    assert worst_case_imbalance(v, R, sum(C)) <= exact


def test_classify_zones():
    report = classify_zones([2, 0, -1, 5], EXACT_ORACLE)
    assert report.feeders == {0, 3} and report.receivers == {2}
    assert report.estimator == EXACT_ORACLE


def _enumerate_delta(f_A, f_C):
    out = {}
    for (n, pa), (m, pc) in itertools.product(f_A.items(), f_C.items()):
        out[n - m] = out.get(n - m, 0.0) + pa * pc
    return out


@pytest.mark.parametrize("f_A,f_C", [
    ({1: 1.0}, {0: 1.0}),
    ({0: 0.5, 1: 0.5}, {0: 0.5, 1: 0.5}),
    ({0: 1.0}, {0: 1.0}),
    ({0: 0.2, 2: 0.8}, {0: 0.1, 1: 0.6, 3: 0.3}),
])
def test_delta_distribution_matches_enumeration(f_A, f_C):
    got = delta_distribution(f_A, f_C).as_dict(tol=1e-15)
    want = {k: v for k, v in _enumerate_delta(f_A, f_C).items() if v > 0}
    assert got.keys() == want.keys()
    for k in want:
        assert got[k] == pytest.approx(want[k], abs=1e-12)


def test_delta_support_bounds():
    d = delta_distribution([0.5, 0.5, 0.0], [0.2, 0.3, 0.4, 0.1])
    assert (d.low, d.high) == (-3, 2)


def test_chain_support_and_normalization():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        bV, bC, n_O, v0 = (int(x) for x in (rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 11), rng.integers(0, 6)))
        f_A = [random_pmf(rng, bV) for _ in range(n_O)]
        f_C = [random_pmf(rng, bC) for _ in range(n_O)]
        chain = chain_from_histograms(v0, f_A, f_C, n_O)
        for t in range(1, n_O + 1):
            pmf = chain.at(t)
            assert abs(pmf.probs.sum() - 1.0) <= 1e-9
            assert (pmf.low, pmf.high) == (v0 - bC * t, v0 + bV * t)


def test_shortage_single_slot_by_hand():
    chain = chain_from_histograms(0, [{0: 1.0}], [{0: 0.5, 1: 0.5}], 1)
    # I(1) is 0 or -1 with equal chance
    assert shortage_probability(chain) == pytest.approx(0.5)
    assert shortage_probability(chain_from_histograms(1, [{0: 1.0}], [{0: 0.5, 1: 0.5}], 1)) == 0.0
    assert shortage_probability(chain_from_histograms(3, [[1.0]] * 4, [[1.0]] * 4, 4)) == 0.0


def test_shortage_score_sums_across_slots():
    chain = chain_from_histograms(0, [[1.0]] * 3, [[0.0, 1.0]] * 3, 3)
    assert shortage_probability(chain) == pytest.approx(3.0)


def test_shortage_curve_matches_pointwise():
    rng = np.random.default_rng(2)
    f_A = [random_pmf(rng, 2) for _ in range(6)]
    f_C = [random_pmf(rng, 3) for _ in range(6)]
    base = chain_from_histograms(0, f_A, f_C, 6)
    levels = list(range(-3, 20))
    curve = shortage_curve(base, levels)
    for v, score in zip(levels, curve):
        direct = shortage_probability(chain_from_histograms(v, f_A, f_C, 6))
        assert score == pytest.approx(direct, abs=1e-12)
        assert shortage_probability(base, shift=v) == pytest.approx(direct, abs=1e-12)


def test_shortage_monotone_in_inventory():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n_O = int(rng.integers(1, 11))
        f_A = [random_pmf(rng, int(rng.integers(1, 4))) for _ in range(n_O)]
        f_C = [random_pmf(rng, int(rng.integers(1, 4))) for _ in range(n_O)]
        curve = shortage_curve(chain_from_histograms(0, f_A, f_C, n_O), range(-2, 3 * n_O + 2))
        assert np.all(np.diff(curve) <= 1e-12)


def _sample_shortage(v0, f_A, f_C, samples, rng):
    """Independent forward simulation of the inventory, one path at a time in bulk."""
    total = 0.0
    level = np.full(samples, v0)
    for a, c in zip(f_A, f_C):
        level = level + rng.choice(len(a), samples, p=a) - rng.choice(len(c), samples, p=c)
        total += np.count_nonzero(level < 0) / samples
    return total


def test_shortage_matches_sampling():
    rng = np.random.default_rng(8)
    for _ in range(5):
        n_O = int(rng.integers(1, 8))
        f_A = [random_pmf(rng, 2) for _ in range(n_O)]
        f_C = [random_pmf(rng, 3) for _ in range(n_O)]
        v0 = int(rng.integers(0, 4))
        exact = shortage_probability(chain_from_histograms(v0, f_A, f_C, n_O))
        assert _sample_shortage(v0, f_A, f_C, 40000, rng) == pytest.approx(exact, abs=0.05)


def test_probabilistic_examples():
    f_A, f_C = [{0: 1.0}], [{0: 0.5, 1: 0.5}]
    assert probabilistic_imbalance(0, f_A, f_C, 0.05) == -1
    assert probabilistic_imbalance(1, f_A, f_C, 0.05) == 0
    assert probabilistic_imbalance(3, [[1.0]] * 4, [[1.0]] * 4, 0.05) == 3


def test_probabilistic_receiver_needs_fewest_vehicles():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n_O = int(rng.integers(1, 8))
        f_A = [random_pmf(rng, 2) for _ in range(n_O)]
        f_C = [random_pmf(rng, 3) for _ in range(n_O)]
        v0 = int(rng.integers(-2, 6))
        eps = float(rng.uniform(0.01, 0.5))
        b = probabilistic_imbalance(v0, f_A, f_C, eps)

        def F(v):
            return shortage_probability(chain_from_histograms(v, f_A, f_C, n_O))

        if F(v0) > 0:
            assert b <= 0
            assert F(v0 - b) <= eps
            if b < 0:
                assert F(v0 - b - 1) > eps
        else:
            assert 0 <= b <= max(v0, 0)
            assert F(v0 - b) <= eps
            if b < v0:
                assert F(v0 - b - 1) > eps


def test_probabilistic_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        probabilistic_imbalance(1, [[1.0]], [[1.0]], 0.0)
