import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scenarios
from edsa_market.model import AllocationPlan, Demand, Device, Scenario
from edsa_market.sim import SimConfig, generate_scenario
from edsa_market.solver import (
    REJECT_BATTERY, REJECT_QUALITY, ExactLimits, LimitError, normalized_revenue, report_csv,
    report_to_dict, solve_exact, solve_greedy, validate_plan,
)
from oracles import enumerate_optimum, greedy_trace, make_demand, make_device, pruned_optimum


def worked_example():
    """Three devices, three types, four buyers. Quality caps route buyer k to
    device k; device 3 has room for buyer 3 and only one of buyer 4's demands."""
    def dev(name, battery, cap, prices):
        return Device(name, battery, {t: cap for t in range(3)}, prices, {t: 1.0 for t in range(3)})

    devices = (
        dev("dev1", 100.0, 30, {0: 11.0, 1: 11.0, 2: 11.0}),
        dev("dev2", 110.0, 60, {0: 11.0, 1: 11.0, 2: 11.0}),
        dev("dev3", 120.0, 100, {0: 12.0, 1: 10.0, 2: 9.0}),
    )
    demands = (
        make_demand(1, 0, 40, 30), make_demand(1, 1, 40, 30),
        make_demand(2, 1, 50, 60), make_demand(2, 2, 50, 60),
        make_demand(3, 0, 50, 90),
        make_demand(4, 1, 60, 90), make_demand(4, 2, 60, 90),
    )
    return Scenario(devices, demands)


def test_worked_example_shape():
    report = solve_greedy(worked_example())
    placed = report.plan.device_of()
    assert placed[(1, 0)] == placed[(1, 1)] == "dev1"
    assert placed[(2, 1)] == placed[(2, 2)] == "dev2"
    assert placed[(3, 0)] == "dev3"
    assert [k for k in placed if k[0] == 4] == [(4, 1)]
    assert report.rejected == (((4, 2), REJECT_BATTERY),)
    assert validate_plan(worked_example(), report.plan) == []


def test_empty_demands():
    sc = Scenario((make_device("a", 7.0), make_device("b", 3.0)))
    for report in (solve_greedy(sc), solve_exact(sc)):
        assert report.plan.assignments == ()
        assert report.plan.revenue == 0
        assert report.plan.residual_battery == {"a": 7.0, "b": 3.0}


def ab_scenario():
    dev = make_device("x", 10.0, caps={0: 100, 1: 100}, prices={0: 2.0, 1: 1.0})
    return Scenario((dev,), (make_demand(0, 0, 6), make_demand(1, 1, 5)))


def test_ab_hand_trace():
    sc = ab_scenario()
    dev = sc.devices[0]
    assert normalized_revenue(dev, sc.demands[0]) == 2.0
    assert normalized_revenue(dev, sc.demands[1]) == 1.0
    report = solve_greedy(sc)
    assert report.plan.assignments == (("x", (0, 0)),)
    assert report.rejected == (((1, 1), REJECT_BATTERY),)
    assert report.plan.revenue == 12.0
    assert report.plan.residual_battery == {"x": 4.0}
    assert greedy_trace(sc.devices, sc.demands) == ([(0, 0)], 4.0)
    assert enumerate_optimum(sc) == 12.0


def test_nr_examples():
    dev = make_device(prices={0: 10.0}, energy={0: 0.5}, overhead=0.1)
    assert normalized_revenue(dev, make_demand(samples=30)) == pytest.approx(300 / 18)
    assert normalized_revenue(dev, make_demand(samples=3)) == pytest.approx(
        normalized_revenue(dev, make_demand(samples=300)))
    scaled = make_device(prices={0: 30.0}, energy={0: 1.5}, overhead=0.3)
    assert normalized_revenue(scaled, make_demand(samples=30)) == pytest.approx(300 / 18)


def test_quality_excludes_everything():
    sc = Scenario((make_device(caps={0: 10}),), (make_demand(0, 0, 1, 50), make_demand(1, 0, 2, 90)))
    for report in (solve_greedy(sc), solve_exact(sc)):
        assert report.plan.revenue == 0
        assert {r for _, r in report.rejected} == {REJECT_QUALITY}


def test_device_order_literal_vs_resort():
    # "small" sorts first on initial battery; after "big" takes the 9-unit
    # demand its residual (1) is the smallest, which only resort notices
    big, small = make_device("big", 10.0), make_device("small", 8.0)
    sc = Scenario((big, small), (make_demand(0, 0, 9), make_demand(1, 0, 1)))
    assert solve_greedy(sc).plan.device_of() == {(0, 0): "big", (1, 0): "small"}
    assert solve_greedy(sc, resort=True).plan.device_of() == {(0, 0): "big", (1, 0): "big"}
    assert solve_greedy(sc, resort=True).method == "greedy-resort"


def test_tie_break_revenue_then_key():
    # equal NR everywhere; larger revenue first, then (buyer, type)
    dev = make_device("x", 5.0, caps={0: 100, 1: 100})
    sc = Scenario((dev,), (make_demand(0, 0, 2), make_demand(1, 1, 3), make_demand(2, 0, 3)))
    assert solve_greedy(sc).plan.device_of() == {(1, 1): "x", (0, 0): "x"}


def _random_small(seed, n_dev=3, n_dem=8):
    rng = np.random.default_rng(seed)
    cfg = SimConfig(devices=n_dev, types=3, buyers=6, demands=n_dem,
                    battery=float(rng.uniform(500, 6000)))
    return generate_scenario(cfg, seed)


@pytest.mark.parametrize("seed", range(4))
def test_exact_matches_full_enumeration(seed):
    sc = _random_small(seed)
    want = enumerate_optimum(sc)
    for strategy in ("enumerate", "bnb"):
        report = solve_exact(sc, strategy=strategy)
        assert report.optimal
        assert report.plan.revenue == want
        assert validate_plan(sc, report.plan) == []
    assert solve_greedy(sc).plan.revenue <= want


def test_branch_and_bound_on_larger_instance():
    sc = _random_small(11, n_dev=3, n_dem=14)
    report = solve_exact(sc)
    assert report.method == "exact-bnb" and report.optimal
    assert report.plan.revenue == pruned_optimum(sc)


def test_exact_limits_and_timeout():
    sc = _random_small(3, n_dev=3, n_dem=8)
    with pytest.raises(LimitError):
        solve_exact(sc, ExactLimits(max_demands=5))
    with pytest.raises(LimitError):
        solve_exact(sc, ExactLimits(max_devices=2))
    report = solve_exact(sc, ExactLimits(timeout=0.0), strategy="bnb")
    assert not report.optimal
    assert validate_plan(sc, report.plan) == []
    assert report.plan.revenue >= solve_greedy(sc).plan.revenue


def test_validator_flags_double_assignment():
    sc = Scenario((make_device("a", 50.0), make_device("b", 50.0)), (make_demand(0, 0, 3),))
    plan = solve_greedy(sc).plan
    assert validate_plan(sc, plan) == []
    doubled = AllocationPlan(plan.assignments + (("b", (0, 0)),), 6.0, {"a": 47.0, "b": 47.0})
    assert any(v.startswith("allocation") for v in validate_plan(sc, doubled))


def test_validator_flags_epsilon_overdraw():
    sc = Scenario((make_device("a", 10.0),), (make_demand(0, 0, 10),))
    plan = solve_greedy(sc).plan
    assert plan.residual_battery == {"a": 0.0}
    tight = replace(sc, devices=(sc.devices[0].with_battery(10.0 - 1e-9),))
    assert any(v.startswith("battery") for v in validate_plan(tight, plan))


def test_validator_flags_quality_and_dangling():
    sc = Scenario((make_device("a", 50.0, caps={0: 20}),), (make_demand(0, 0, 1, 30),))
    bad = AllocationPlan((("a", (0, 0)),), 1.0, {"a": 49.0})
    assert any(v.startswith("quality") for v in validate_plan(sc, bad))
    ghost = AllocationPlan((("zz", (0, 0)), ("a", (9, 9))), 0.0, {"a": 50.0})
    found = validate_plan(sc, ghost)
    assert any("dangling device" in v for v in found) and any("dangling demand" in v for v in found)


def test_validator_flags_wrong_revenue():
    sc = Scenario((make_device("a", 50.0),), (make_demand(0, 0, 3),))
    plan = solve_greedy(sc).plan
    assert any(v.startswith("revenue") for v in validate_plan(sc, replace(plan, revenue=3.5)))
    assert any(v.startswith("residual") for v in
               validate_plan(sc, replace(plan, residual_battery={"a": 48.0})))


@settings(max_examples=300)
@given(scenarios())
def test_greedy_always_feasible(sc):
    assert validate_plan(sc, solve_greedy(sc).plan) == []
    assert validate_plan(sc, solve_greedy(sc, resort=True).plan) == []


@settings(max_examples=150)
@given(scenarios(max_demands=7))
def test_exact_dominates_and_matches_oracle(sc):
    exact = solve_exact(sc)
    assert validate_plan(sc, exact.plan) == []
    assert exact.plan.revenue == pruned_optimum(sc)
    assert solve_exact(sc, strategy="bnb").plan.revenue == exact.plan.revenue
    assert exact.plan.revenue >= solve_greedy(sc).plan.revenue


@settings(max_examples=300)
@given(scenarios(max_devices=1), st.sampled_from([1.0, 1.5, 2.0, 4.0]))
def test_greedy_monotone_in_battery_single_device(sc, c):
    scaled = replace(sc, devices=tuple(d.with_battery(d.battery * c) for d in sc.devices))
    assert solve_greedy(scaled).plan.revenue >= solve_greedy(sc).plan.revenue


def test_greedy_battery_scaling_counterexample_with_several_devices():
    # with more than one device, first-fit is not monotone in battery: the
    # smaller, cheaper device comes first and, once scaled up, takes a demand
    # that used to land on the better-paying one
    cheap = Device("cheap", 1.0, {0: 10}, {0: 0.5}, {0: 0.5}, 1.0)
    rich = Device("rich", 2.0, {0: 10}, {0: 1.0}, {0: 0.5})
    demand = (make_demand(0, 0, 1),)
    base = Scenario((rich, cheap), demand)
    scaled = Scenario((rich.with_battery(3.0), cheap.with_battery(1.5)), demand)
    assert solve_greedy(base).plan.device_of() == {(0, 0): "rich"}
    assert solve_greedy(scaled).plan.device_of() == {(0, 0): "cheap"}
    assert solve_greedy(scaled).plan.revenue < solve_greedy(base).plan.revenue


def test_deterministic_report_bytes():
    sc = _random_small(5, n_dem=10)
    one = json.dumps(report_to_dict(solve_greedy(sc)), sort_keys=True)
    two = json.dumps(report_to_dict(solve_greedy(sc)), sort_keys=True)
    assert one == two
    assert report_csv(solve_greedy(sc)) == report_csv(solve_greedy(sc))


def test_report_csv_layout():
    text = report_csv(solve_greedy(ab_scenario()))
    lines = text.splitlines()
    assert lines[0] == "kind,key,value,detail"
    assert lines[1] == "total,revenue,12.0,greedy"
    assert "demand,0:0,selected,x" in lines
    assert "demand,1:1,rejected,battery" in lines


def test_sample_count_feeds_solver():
    # 5 h at 0.4 h needs 13 samples, so a 12-unit battery cannot host it
    dev = make_device("a", 12.0)
    sc = Scenario((dev,), (Demand(0, 0, 5.0, 0.4, 10),))
    assert solve_greedy(sc).plan.revenue == 0
    sc = Scenario((dev.with_battery(13.0),), sc.demands)
    assert solve_greedy(sc).plan.revenue == 13.0
