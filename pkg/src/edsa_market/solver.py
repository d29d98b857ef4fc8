"""Demand selection and allocation: NR-greedy heuristic, exact solver, validator.

The allocation problem is a multiple knapsack with assignment restrictions:
devices are knapsacks sized by battery, demands are items, and a device may
only take a demand whose quality it can meet.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from .model import (
    AllocationPlan,
    Demand,
    DemandKey,
    Device,
    ModelError,
    PriceFactor,
    Scenario,
    demand_revenue,
    energy_cost,
    quality_ok,
)

REJECT_BATTERY = "battery"
REJECT_QUALITY = "quality"
REJECT_DOMINATED = "dominated"


class LimitError(ValueError):
    """Scenario is larger than the exact solver is allowed to attack."""


@dataclass(frozen=True)
class SolveReport:
    plan: AllocationPlan
    selected_count: int
    rejected: Tuple[Tuple[DemandKey, str], ...]
    method: str
    optimal: bool = True


@dataclass(frozen=True)
class ExactLimits:
    max_demands: int = 20
    max_devices: int = 5
    timeout: float = 10.0
    enumerate_below: int = 12


def normalized_revenue(device: Device, demand: Demand,
                       price_factor: Optional[PriceFactor] = None) -> float:
    energy = energy_cost(device, demand)
    if energy <= 0:
        raise ModelError("energy cost must be positive")
    return demand_revenue(device, demand, price_factor) / energy


class _Table:
    """Per (demand, device) revenue/energy/quality lookups for one scenario."""

    def __init__(self, scenario: Scenario, price_factor: Optional[PriceFactor]):
        self.scenario = scenario
        self.devices = scenario.devices
        self.demands = scenario.demands
        self.battery = [d.battery for d in self.devices]
        self.ok: List[List[bool]] = []
        self.energy: List[List[float]] = []
        self.revenue: List[List[float]] = []
        for m in self.demands:
            oks, es, rs = [], [], []
            for d in self.devices:
                offered = d.offers(m.data_type)
                oks.append(offered and quality_ok(d, m))
                es.append(energy_cost(d, m) if offered else math.inf)
                rs.append(demand_revenue(d, m, price_factor) if offered else 0.0)
            self.ok.append(oks)
            self.energy.append(es)
            self.revenue.append(rs)

    def feasible_devices(self, m: int) -> List[int]:
        return [i for i, good in enumerate(self.ok[m]) if good]

    def build_plan(self, placement: Dict[int, int]) -> AllocationPlan:
        per_device: List[List[float]] = [[] for _ in self.devices]
        revenues = []
        for m, i in placement.items():
            per_device[i].append(self.energy[m][i])
            revenues.append(self.revenue[m][i])
        assignments = tuple(sorted(
            ((self.devices[i].id, self.demands[m].key) for m, i in placement.items()),
            key=lambda a: (self._dev_index(a[0]), a[1]),
        ))
        residual = {d.id: _residual(d.battery, per_device[i]) for i, d in enumerate(self.devices)}
        return AllocationPlan(assignments, math.fsum(revenues), residual)

    def _dev_index(self, device_id: str) -> int:
        for i, d in enumerate(self.devices):
            if d.id == device_id:
                return i
        raise KeyError(device_id)


def _residual(battery: float, energies: Sequence[float]) -> float:
    return battery - math.fsum(energies) if energies else battery


def _fits(battery: float, used: float, energies: List[float], extra: float) -> bool:
    # fast path on the running sum; fall back to an exact sum only near the edge
    total = used + extra
    tol = 1e-9 * max(1.0, battery)
    if total <= battery - tol:
        return True
    if total > battery + tol:
        return False
    return math.fsum(energies + [extra]) <= battery


def _report(table: _Table, placement: Dict[int, int], method: str, optimal: bool,
            reasons: Optional[Dict[int, str]] = None) -> SolveReport:
    plan = table.build_plan(placement)
    rejected = []
    for m, demand in enumerate(table.demands):
        if m in placement:
            continue
        if reasons and m in reasons:
            reason = reasons[m]
        elif not any(table.ok[m]):
            reason = REJECT_QUALITY
        else:
            reason = REJECT_DOMINATED
        rejected.append((demand.key, reason))
    return SolveReport(plan, len(placement), tuple(rejected), method, optimal)


# -- greedy ----------------------------------------------------------------

def greedy_order(table: _Table) -> List[int]:
    """Demand indices in the order the NR heuristic considers them.

    Sort key per demand: its best NR over quality-feasible devices (descending),
    then the revenue on that device (descending), then (buyer, type) ascending.
    Demands no device can serve on quality sort last.
    """
    keys = []
    for m, demand in enumerate(table.demands):
        best_nr, best_rev = -1.0, 0.0
        for i in table.feasible_devices(m):
            nr = table.revenue[m][i] / table.energy[m][i]
            rev = table.revenue[m][i]
            if nr > best_nr or (nr == best_nr and rev > best_rev):
                best_nr, best_rev = nr, rev
        keys.append((-best_nr, -best_rev, demand.key, m))
    return [k[-1] for k in sorted(keys)]


def solve_greedy(scenario: Scenario, *, resort: bool = False,
                 price_factor: Optional[PriceFactor] = None) -> SolveReport:
    """NR-based greedy selection.

    Devices are sorted once by initial battery (ascending, ties by position),
    as in the printed algorithm. ``resort=True`` re-sorts them by residual
    battery before each demand instead.
    """
    table = _Table(scenario, price_factor)
    n_dev = len(table.devices)
    used = [0.0] * n_dev
    loads: List[List[float]] = [[] for _ in range(n_dev)]
    device_order = sorted(range(n_dev), key=lambda i: (table.battery[i], i))

    placement: Dict[int, int] = {}
    reasons: Dict[int, str] = {}
    for m in greedy_order(table):
        if not any(table.ok[m]):
            reasons[m] = REJECT_QUALITY
            continue
        if resort:
            device_order = sorted(range(n_dev), key=lambda i: (table.battery[i] - used[i], i))
        for i in device_order:
            if not table.ok[m][i]:
                continue
            e = table.energy[m][i]
            if _fits(table.battery[i], used[i], loads[i], e):
                placement[m] = i
                used[i] += e
                loads[i].append(e)
                break
        else:
            reasons[m] = REJECT_BATTERY
    return _report(table, placement, "greedy-resort" if resort else "greedy", True, reasons)


# -- exact -----------------------------------------------------------------

class _Search:
    def __init__(self, table: _Table, order: List[int], deadline: float):
        self.t = table
        self.order = order
        self.deadline = deadline
        self.n_dev = len(table.devices)
        self.used = [0.0] * self.n_dev
        self.loads: List[List[float]] = [[] for _ in range(self.n_dev)]
        self.current: Dict[int, int] = {}
        self.best_value = -math.inf
        self.best: Dict[int, int] = {}
        self.nodes = 0
        self.timed_out = False

    def _tick(self) -> bool:
        self.nodes += 1
        if (self.nodes == 1 or self.nodes & 1023 == 0) and time.monotonic() > self.deadline:
            self.timed_out = True
        return self.timed_out

    def _leaf(self) -> None:
        value = math.fsum(self.t.revenue[m][i] for m, i in self.current.items())
        if value > self.best_value:
            self.best_value = value
            self.best = dict(self.current)

    def _children(self, m: int):
        for i in range(self.n_dev):
            if self.t.ok[m][i] and _fits(self.t.battery[i], self.used[i], self.loads[i],
                                         self.t.energy[m][i]):
                yield i
        yield None

    def _push(self, m: int, i: int) -> None:
        e = self.t.energy[m][i]
        self.current[m] = i
        self.used[i] += e
        self.loads[i].append(e)

    def _pop(self, m: int, i: int) -> None:
        del self.current[m]
        self.loads[i].pop()
        self.used[i] = math.fsum(self.loads[i])


class _Enumerator(_Search):
    """Every assignment vector satisfying battery, quality and allocation limits."""

    def run(self, depth: int = 0) -> None:
        if self._tick():
            return
        if depth == len(self.order):
            self._leaf()
            return
        m = self.order[depth]
        for i in self._children(m):
            if i is None:
                self.run(depth + 1)
            else:
                self._push(m, i)
                self.run(depth + 1)
                self._pop(m, i)
            if self.timed_out:
                return


class _BranchAndBound(_Search):
    """Depth-first search pruned by a fractional single-knapsack bound.

    The bound pools all residual battery and lets each remaining demand take its
    best revenue at its smallest energy, filling the pool by density. Any real
    assignment is feasible for that relaxation, so the bound never undercuts.
    """

    def __init__(self, table: _Table, order: List[int], deadline: float):
        super().__init__(table, order, deadline)
        self.best_rev = []
        self.min_energy = []
        for m in range(len(table.demands)):
            devs = table.feasible_devices(m)
            self.best_rev.append(max((table.revenue[m][i] for i in devs), default=0.0))
            self.min_energy.append(min((table.energy[m][i] for i in devs), default=math.inf))
        self.value = 0.0

    def bound(self, depth: int) -> float:
        residual = [self.t.battery[i] - self.used[i] for i in range(self.n_dev)]
        capacity = sum(max(r, 0.0) for r in residual)
        total = self.value
        for m in self.order[depth:]:
            if capacity <= 0:
                break
            if not any(self.t.ok[m][i] and self.t.energy[m][i] <= residual[i] * (1 + 1e-9)
                       for i in range(self.n_dev)):
                continue
            e, r = self.min_energy[m], self.best_rev[m]
            if e <= capacity:
                total += r
                capacity -= e
            else:
                total += r * capacity / e
                capacity = 0.0
        return total

    def run(self, depth: int = 0) -> None:
        if self._tick():
            return
        if depth == len(self.order):
            self._leaf()
            return
        if self.best_value > -math.inf:
            eps = 1e-9 * max(1.0, abs(self.best_value))
            if self.bound(depth) + eps <= self.best_value:
                return
        m = self.order[depth]
        for i in self._children(m):
            if i is None:
                self.run(depth + 1)
            else:
                self._push(m, i)
                self.value += self.t.revenue[m][i]
                self.run(depth + 1)
                self.value -= self.t.revenue[m][i]
                self._pop(m, i)
            if self.timed_out:
                return


def solve_exact(scenario: Scenario, limits: ExactLimits = ExactLimits(), *,
                strategy: str = "auto",
                price_factor: Optional[PriceFactor] = None) -> SolveReport:
    """Globally optimal allocation.

    ``strategy`` is ``"auto"`` (enumerate below ``limits.enumerate_below``
    demands, branch-and-bound otherwise), ``"enumerate"`` or ``"bnb"``. On
    timeout the best plan found so far is returned with ``optimal=False``.
    """
    if len(scenario.demands) > limits.max_demands:
        raise LimitError(f"{len(scenario.demands)} demands exceeds limit {limits.max_demands}")
    if len(scenario.devices) > limits.max_devices:
        raise LimitError(f"{len(scenario.devices)} devices exceeds limit {limits.max_devices}")
    if strategy == "auto":
        strategy = "enumerate" if len(scenario.demands) < limits.enumerate_below else "bnb"
    if strategy not in ("enumerate", "bnb"):
        raise ValueError(f"unknown strategy {strategy!r}")

    table = _Table(scenario, price_factor)
    deadline = time.monotonic() + limits.timeout
    if strategy == "enumerate":
        search: _Search = _Enumerator(table, list(range(len(table.demands))), deadline)
    else:
        def density(m: int) -> float:
            bb_e = min((table.energy[m][i] for i in table.feasible_devices(m)), default=math.inf)
            bb_r = max((table.revenue[m][i] for i in table.feasible_devices(m)), default=0.0)
            return bb_r / bb_e if bb_e < math.inf else -1.0
        order = sorted(range(len(table.demands)), key=lambda m: (-density(m), m))
        search = _BranchAndBound(table, order, deadline)
    # the heuristic's plan is the incumbent: it prunes early and is what a
    # timed-out search falls back to
    greedy = solve_greedy(scenario, price_factor=price_factor)
    index = {d.key: m for m, d in enumerate(table.demands)}
    dev_index = {d.id: i for i, d in enumerate(table.devices)}
    search.best = {index[key]: dev_index[dev] for dev, key in greedy.plan.assignments}
    search.best_value = greedy.plan.revenue
    search.run()
    return _report(table, search.best, f"exact-{strategy}", not search.timed_out)


# -- validation ------------------------------------------------------------

def validate_plan(scenario: Scenario, plan: AllocationPlan,
                  price_factor: Optional[PriceFactor] = None) -> List[str]:
    """Violations of the battery, allocation and quality constraints.

    Also checks that revenue and residual batteries recompute exactly from
    the scenario. An empty list means the plan is valid.
    """
    violations: List[str] = []
    devices = {d.id: d for d in scenario.devices}
    demands = {m.key: m for m in scenario.demands}
    energies: Dict[str, List[float]] = {d: [] for d in devices}
    revenues: List[float] = []
    seen: Dict[DemandKey, str] = {}

    for dev_id, key in plan.assignments:
        device = devices.get(dev_id)
        demand = demands.get(tuple(key))
        if device is None:
            violations.append(f"dangling device {dev_id!r}")
            continue
        if demand is None:
            violations.append(f"dangling demand {key!r}")
            continue
        if demand.key in seen:
            violations.append(f"allocation: demand {demand.key} assigned to "
                              f"{seen[demand.key]!r} and {dev_id!r}")
        seen.setdefault(demand.key, dev_id)
        if not device.offers(demand.data_type):
            violations.append(f"quality: device {dev_id!r} does not offer type {demand.data_type}")
            continue
        if not quality_ok(device, demand):
            violations.append(f"quality: demand {demand.key} wants {demand.quality} > "
                              f"cap {device.quality_cap[demand.data_type]} on {dev_id!r}")
        energies[dev_id].append(energy_cost(device, demand))
        revenues.append(demand_revenue(device, demand, price_factor))

    for dev_id, device in devices.items():
        spent = math.fsum(energies[dev_id])
        if spent > device.battery:
            violations.append(f"battery: device {dev_id!r} spends {spent!r} > {device.battery!r}")
        expected = _residual(device.battery, energies[dev_id])
        got = plan.residual_battery.get(dev_id)
        if got != expected:
            violations.append(f"residual: device {dev_id!r} reports {got!r}, expected {expected!r}")
    extra = set(plan.residual_battery) - set(devices)
    for dev_id in sorted(extra):
        violations.append(f"dangling device {dev_id!r} in residuals")
    if plan.revenue != math.fsum(revenues):
        violations.append(f"revenue: reported {plan.revenue!r}, recomputed {math.fsum(revenues)!r}")
    return violations


# -- serialization ---------------------------------------------------------

def report_to_dict(report: SolveReport) -> dict:
    plan = report.plan
    return {
        "method": report.method,
        "optimal": report.optimal,
        "revenue": plan.revenue,
        "selected_count": report.selected_count,
        "assignments": [{"device": dev, "buyer": key[0], "type": key[1]}
                        for dev, key in plan.assignments],
        "rejected": [{"buyer": key[0], "type": key[1], "reason": reason}
                     for key, reason in report.rejected],
        "residual_battery": dict(plan.residual_battery),
    }


def report_csv(report: SolveReport) -> str:
    """Flat summary: one header block of totals, then one row per demand."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "key", "value", "detail"])
    w.writerow(["total", "revenue", repr(report.plan.revenue), report.method])
    for dev, residual in report.plan.residual_battery.items():
        w.writerow(["residual", dev, repr(residual), ""])
    for dev, key in report.plan.assignments:
        w.writerow(["demand", f"{key[0]}:{key[1]}", "selected", dev])
    for key, reason in report.rejected:
        w.writerow(["demand", f"{key[0]}:{key[1]}", "rejected", reason])
    return buf.getvalue()
