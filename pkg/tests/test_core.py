import numpy as np
import pytest

from relocsim.core import (
    Assignment,
    ConfigError,
    EnRoute,
    OperatorState,
    RelocationPlan,
    ServiceNetwork,
    SystemState,
    TimeGrid,
    conservation_holds,
    decision_points,
    dense_zone_index,
    minutes_to_slots,
    slot_of,
    time_of,
)


def test_grid_derived_durations():
    g = TimeGrid(tau=2.0, n_C=15, n_R=30, n_O=45)
    assert (g.T_C, g.T_R, g.T_O) == (30.0, 60.0, 90.0)
    assert g.decision_slot(3) == 45


@pytest.mark.parametrize("n_C,n_R,n_O", [(20, 10, 30), (10, 30, 20), (0, 5, 5)])
def test_grid_rejects_bad_ordering(n_C, n_R, n_O):
    with pytest.raises(ConfigError):
        TimeGrid(1.0, n_C, n_R, n_O)


def test_grid_rejects_nonpositive_tau():
    with pytest.raises(ConfigError):
        TimeGrid(0.0, 1, 1, 1)


@pytest.mark.parametrize("minutes,tau,slot", [(0, 1, 0), (59.5, 1, 59), (30, 15, 2)])
def test_slot_of(minutes, tau, slot):
    g = TimeGrid(tau, 1, 1, 1)
    assert slot_of(minutes, g) == slot
    assert time_of(slot, g) <= minutes < time_of(slot + 1, g)


def test_slot_of_negative_time():
    with pytest.raises(ValueError):
        slot_of(-1, TimeGrid())


def test_minutes_round_half_up():
    assert minutes_to_slots(12.5, 1.0) == 13
    assert minutes_to_slots(12.49, 1.0) == 12
    assert minutes_to_slots(22.5, 15.0) == 2


def test_decision_points():
    assert decision_points(TimeGrid(1, 15, 30, 45), 45) == [0, 15, 30]
    assert len(decision_points(TimeGrid(1, 15, 30, 45), 1440)) == 96
    assert decision_points(TimeGrid(1, 10, 10, 10), 10) == [0]


def test_network_defaults_operator_times():
    T = np.array([[2, 5], [6, 3]])
    net = ServiceNetwork(zones=("a", "b"), travel_time=T)
    assert net.N == 2
    assert net.T(0, 1) == 5 and net.T(1, 1) == 3
    # relocator already in the zone needs no time to get there
    assert net.T_op(1, 1) == 0 and net.T_op(1, 0) == 6
    with pytest.raises(ValueError):
        net.travel_time[0, 0] = 9


def test_network_validation():
    with pytest.raises(ConfigError):
        ServiceNetwork(zones=(0, 1), travel_time=np.array([[1, -1], [1, 1]]))
    with pytest.raises(ConfigError):
        ServiceNetwork(zones=(0, 1), travel_time=np.ones((3, 3)))
    with pytest.raises(ConfigError):
        ServiceNetwork(zones=(0, 1), travel_time=np.ones((2, 2)), operator_travel_time=np.ones((3, 3)))


def test_state_conservation():
    state = SystemState(slot=0, inventory=np.array([2, 1]))
    state.add_en_route(EnRoute(1, 5, False, 3))
    state.add_en_route(EnRoute(0, 7, True, 1))
    assert state.vehicles_en_route() == 4
    assert conservation_holds(state, 7)
    assert not conservation_holds(state, 6)


def test_operator_state_idle():
    assert OperatorState(0, True, 0, 2).idle
    assert not OperatorState(0, True, 3, 2).idle
    with pytest.raises(ValueError):
        OperatorState(0, True, -1, 0)


def test_plan_consistency_checks():
    plan = RelocationPlan(0, flows={(0, 1): 10}, tasks={(0, 1): [7, 3]})
    assert plan.check(eta=7) == []
    plan.assignments = [Assignment(0, 0, 1, 0, 7, 0, 1, 5), Assignment(0, 0, 1, 1, 3, 0, 1, 5)]
    assert any("assigned twice" in p for p in plan.check(eta=7))
    bad = RelocationPlan(0, flows={(0, 1): 10}, tasks={(0, 1): [8, 1]})
    problems = bad.check(eta=7)
    assert any("sum" in p for p in problems) and any("out of range" in p for p in problems)
    assert RelocationPlan(0).is_empty()


def test_dense_zone_index_orders_numbers_first():
    assert dense_zone_index(["12", "4", "b", "a", "4"]) == {"4": 0, "12": 1, "a": 2, "b": 3}
