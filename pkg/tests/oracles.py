"""Independent reference implementations used only by the tests.

These deliberately avoid the package's own search and bookkeeping code: the
enumeration oracle walks every assignment vector, the pricing oracle
re-derives each formula from scratch, and so on.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

from edsa_market.model import Demand, Device, Scenario, demand_revenue, energy_cost


def timestamps_needed(duration: float, interval: float) -> int:
    """Count sample instants 0, s, 2s, ... strictly before ``duration``."""
    d, s = Fraction(duration), Fraction(interval)
    n, t = 0, Fraction(0)
    while t < d:
        n += 1
        t += s
    return n


def loop_energy(n: int, per_sample: float, overhead: float) -> float:
    total = 0.0
    for _ in range(n):
        total += per_sample + overhead
    return total


def loop_revenue(n: int, price: float) -> float:
    total = 0.0
    for _ in range(n):
        total += price
    return total


def _pair_tables(scenario: Scenario):
    ok, energy, revenue = [], [], []
    for m in scenario.demands:
        row_ok, row_e, row_r = [], [], []
        for d in scenario.devices:
            served = d.offers(m.data_type) and m.quality <= d.quality_cap[m.data_type]
            row_ok.append(served)
            row_e.append(energy_cost(d, m) if served else 0.0)
            row_r.append(demand_revenue(d, m) if served else 0.0)
        ok.append(row_ok)
        energy.append(row_e)
        revenue.append(row_r)
    return ok, energy, revenue


def _vector_value(scenario, vector, ok, energy, revenue):
    loads = [[] for _ in scenario.devices]
    revs = []
    for m, choice in enumerate(vector):
        if choice == 0:
            continue
        i = choice - 1
        if not ok[m][i]:
            return None
        loads[i].append(energy[m][i])
        revs.append(revenue[m][i])
    for i, d in enumerate(scenario.devices):
        if math.fsum(loads[i]) > d.battery:
            return None
    return math.fsum(revs)


def enumerate_optimum(scenario: Scenario) -> float:
    """Best revenue over every vector in {unassigned, device 1..D}^M."""
    ok, energy, revenue = _pair_tables(scenario)
    best = 0.0
    choices = range(len(scenario.devices) + 1)
    for vector in itertools.product(choices, repeat=len(scenario.demands)):
        value = _vector_value(scenario, vector, ok, energy, revenue)
        if value is not None and value > best:
            best = value
    return best


def pruned_optimum(scenario: Scenario) -> float:
    """Same optimum as ``enumerate_optimum`` but cuts a branch once a device
    is overfull (an overfull prefix never becomes feasible again). Needed to
    keep 10-demand instances cheap."""
    ok, energy, revenue = _pair_tables(scenario)
    n_dev = len(scenario.devices)
    caps = [d.battery for d in scenario.devices]
    loads = [[] for _ in range(n_dev)]
    revs: list = []
    best = [0.0]

    def walk(m: int) -> None:
        if m == len(scenario.demands):
            value = math.fsum(revs)
            if value > best[0]:
                best[0] = value
            return
        walk(m + 1)
        for i in range(n_dev):
            if not ok[m][i]:
                continue
            loads[i].append(energy[m][i])
            if math.fsum(loads[i]) <= caps[i]:
                revs.append(revenue[m][i])
                walk(m + 1)
                revs.pop()
            loads[i].pop()

    walk(0)
    return best[0]


def greedy_trace(devices, demands):
    """Hand-rolled NR greedy for tiny one-device cases: returns (chosen keys, residual)."""
    (device,) = devices
    ranked = sorted(demands, key=lambda m: (-demand_revenue(device, m) / energy_cost(device, m),
                                            -demand_revenue(device, m), m.key))
    left, chosen = device.battery, []
    for m in ranked:
        e = energy_cost(device, m)
        if e <= left:
            chosen.append(m.key)
            left -= e
    return chosen, left


# -- pricing ------------------------------------------------------------------

def index_oracle(price, qs, rs):
    return Fraction(price) / (Fraction(qs) + Fraction(rs) + 1)


def quote_oracle(records, window, qs, rs, beta, fee):
    """Exact rational recomputation; records are (timestamp, price, qs, rs)."""
    start, end = window
    chosen = [index_oracle(p, q, r) for t, p, q, r in records if start <= t < end]
    if not chosen:
        return None
    base = sum(chosen, Fraction(0)) / len(chosen)
    return base, (1 + Fraction(qs) + Fraction(rs)) * base + Fraction(beta) * Fraction(fee)


def rel_err(got: float, want) -> float:
    want = float(want)
    if want == 0:
        return abs(got)
    return abs(got - want) / abs(want)


def make_device(dev_id="d", battery=100.0, *, caps=None, prices=None, energy=None,
                overhead=0.0) -> Device:
    caps = caps or {0: 100}
    prices = prices or {t: 1.0 for t in caps}
    energy = energy or {t: 1.0 for t in caps}
    return Device(dev_id, battery, caps, prices, energy, overhead)


def make_demand(buyer=0, dtype=0, samples=1, quality=10) -> Demand:
    # one-hour interval makes the sample count equal the duration in hours
    return Demand(buyer, dtype, float(samples), 1.0, quality)
