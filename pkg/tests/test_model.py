import math

import pytest
from hypothesis import given, settings, strategies as st

from edsa_market.model import (
    Demand, Device, ModelError, Scenario, demand_revenue, dumps_scenario, energy_cost,
    loads_scenario, quality_ok, sample_count,
)
from oracles import loop_energy, loop_revenue, make_demand, make_device, timestamps_needed


def test_sample_count_exact_division():
    assert sample_count(Demand(0, 0, 5.0, 1 / 6, 10)) == 30


def test_sample_count_identity():
    assert sample_count(Demand(0, 0, 0.7, 0.7, 10)) == 1


def test_sample_count_partial_interval():
    d = Demand(0, 0, 5.0, 0.4, 10)
    assert timestamps_needed(5.0, 0.4) == 13
    assert sample_count(d) == 13


@given(st.floats(0.05, 20.0), st.floats(0.01, 3.0))
def test_sample_count_matches_timestamp_enumeration(duration, interval):
    ratio = duration / interval
    # near-integer ratios are deliberately snapped; skip them here
    if abs(ratio - round(ratio)) < 1e-6:
        return
    assert sample_count(Demand(0, 0, duration, interval, 10)) == timestamps_needed(duration, interval)


@given(st.floats(0.1, 10.0), st.floats(0.01, 2.0), st.floats(1.0, 3.0))
def test_sample_count_monotone(duration, interval, scale):
    base = sample_count(Demand(0, 0, duration, interval, 10))
    assert sample_count(Demand(0, 0, duration, interval * scale, 10)) <= base
    assert sample_count(Demand(0, 0, duration * scale, interval, 10)) >= base


@pytest.mark.parametrize("duration,interval", [(0.0, 1.0), (1.0, 0.0), (-1.0, 1.0)])
def test_demand_rejects_non_positive(duration, interval):
    with pytest.raises(ModelError):
        Demand(0, 0, duration, interval, 10)


def test_energy_cost_examples():
    dev = make_device(energy={0: 0.5}, overhead=0.1)
    assert energy_cost(dev, make_demand(samples=30)) == pytest.approx(18.0, rel=1e-15)
    dev = make_device(energy={0: 2.75})
    assert energy_cost(dev, make_demand(samples=1)) == 2.75


@given(st.integers(1, 400), st.floats(0.01, 100.0), st.floats(0.0, 50.0))
def test_energy_cost_loop_sum(n, a, b):
    dev = make_device(energy={0: a}, overhead=b)
    assert energy_cost(dev, make_demand(samples=n)) == pytest.approx(loop_energy(n, a, b), rel=1e-12)


def test_revenue_examples():
    dev = make_device(prices={0: 10.0})
    assert demand_revenue(dev, make_demand(samples=30)) == 300.0


@given(st.integers(1, 400), st.floats(0.01, 100.0))
def test_revenue_loop_sum_and_positive(n, price):
    dev = make_device(prices={0: price})
    got = demand_revenue(dev, make_demand(samples=n))
    assert got > 0
    assert got == pytest.approx(loop_revenue(n, price), rel=1e-12)


@given(st.integers(1, 200), st.floats(0.1, 20.0), st.floats(0.1, 20.0))
def test_doubling_duration_doubles_cost_and_revenue(n, price, energy):
    dev = make_device(prices={0: price}, energy={0: energy})
    one, two = make_demand(samples=n), make_demand(samples=2 * n)
    assert energy_cost(dev, two) == pytest.approx(2 * energy_cost(dev, one), rel=1e-15)
    assert demand_revenue(dev, two) == pytest.approx(2 * demand_revenue(dev, one), rel=1e-15)


def test_unknown_type_rejected():
    dev = make_device(caps={0: 50})
    with pytest.raises(ModelError):
        energy_cost(dev, make_demand(dtype=3))
    with pytest.raises(ModelError):
        demand_revenue(dev, make_demand(dtype=3))


def test_price_factor_hook():
    dev = make_device(prices={0: 2.0})
    assert demand_revenue(dev, make_demand(samples=5, quality=50), lambda q: q / 100) == 5.0


def test_quality_rule():
    dev = make_device(caps={0: 50})
    assert quality_ok(dev, make_demand(quality=50))
    assert not quality_ok(dev, make_demand(quality=60))
    assert not quality_ok(dev, make_demand(dtype=1))


@pytest.mark.parametrize("kwargs", [
    {"battery": -1.0},
    {"caps": {0: 55}},
    {"prices": {0: 0.0}},
    {"energy": {0: -1.0}},
    {"caps": {0: 10}, "prices": {1: 1.0}},
])
def test_device_invariants(kwargs):
    with pytest.raises(ModelError):
        make_device(**kwargs)


def test_scenario_invariants():
    dev = make_device()
    with pytest.raises(ModelError):
        Scenario(())
    with pytest.raises(ModelError):
        Scenario((dev, dev))
    with pytest.raises(ModelError):
        Scenario((dev,), (make_demand(), make_demand(samples=2)))


def test_scenario_round_trip():
    devs = (
        Device("a", 12.5, {0: 30, 2: 100}, {0: 1.25, 2: 9.0}, {0: 0.3, 2: 1.0}, 0.05),
        Device("b", 0.0, {1: 10}, {1: 3.0}, {1: 2.0}),
    )
    dems = (Demand(1, 0, 2.5, 1 / 6, 20), Demand(2, 1, 0.3, 0.1, 10))
    sc = Scenario(devs, dems, seed=7)
    text = dumps_scenario(sc)
    back = loads_scenario(text)
    assert back == sc
    assert dumps_scenario(back) == text


def test_scenario_bad_input():
    with pytest.raises(ModelError):
        loads_scenario("{not json")
    with pytest.raises(ModelError):
        loads_scenario('{"format": "other/9", "devices": []}')
    with pytest.raises(ModelError):
        loads_scenario('{"devices": [{"battery": 1}]}')


@settings(max_examples=50)
@given(st.integers(1, 50), st.floats(0.1, 50), st.floats(0.1, 50))
def test_energy_strictly_positive(n, e, o):
    assert energy_cost(make_device(energy={0: e}, overhead=o), make_demand(samples=n)) > 0
    assert not math.isnan(energy_cost(make_device(energy={0: e}), make_demand(samples=n)))
