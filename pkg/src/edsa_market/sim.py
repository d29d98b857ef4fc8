"""Monte-Carlo harness: random marketplaces, parameter sweeps, end-to-end trades.

Scenario draws use two independent numpy streams per (root seed, iteration):
one for devices and one for demands. Demand attributes are drawn for every
(buyer, type) pair in a seeded random order and the scenario keeps the first
``demands`` of them, so a sweep over demand count, battery or device split
compares like with like at each iteration (common random numbers).
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .model import QUALITY_LADDER, Demand, Device, Scenario, sample_count
from .solver import solve_greedy

# Per-sample energy constants. Not given by the source experiments; frozen from
# the calibration run in scripts/calibrate_energy.py (see README).
DEFAULT_E_SENSE: Tuple[float, ...] = (40.0, 44.0, 48.0, 52.0, 56.0, 60.0, 64.0, 68.0, 72.0, 76.0)
DEFAULT_E_OVERHEAD = 16.0

DEMAND_GRID: Tuple[int, ...] = tuple(range(10, 251, 20))
BATTERY_GRID: Tuple[float, ...] = (500.0, 1000.0, 1500.0, 2000.0, 2500.0, 3000.0)
DEVICE_SPLITS: Tuple[Tuple[int, float], ...] = ((10, 300.0), (5, 600.0), (2, 1500.0), (1, 3000.0))


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    devices: int = 5
    types: int = 5
    buyers: int = 10
    demands: int = 50
    battery: float = 2000.0
    price_mean: float = 10.0
    price_sd: float = 3.0
    duration_mean_h: float = 5.0
    duration_sd_h: float = 2.0
    interval_mean_min: float = 10.0
    interval_sd_min: float = 60.0
    # read the printed N(10, 60) as (mean, variance) instead of (mean, sd)
    interval_spread_is_variance: bool = False
    min_duration_h: float = 0.1
    min_interval_min: float = 1.0
    iterations: int = 1000
    rng_seed: int = 0
    e_sense: Tuple[float, ...] = DEFAULT_E_SENSE
    e_overhead: float = DEFAULT_E_OVERHEAD

    def __post_init__(self) -> None:
        if self.devices < 1 or self.types < 1 or self.buyers < 1:
            raise ConfigError("devices, types and buyers must be >= 1")
        if self.demands < 0 or self.demands > self.buyers * self.types:
            raise ConfigError(f"demands must lie in [0, buyers*types={self.buyers * self.types}]")
        if self.battery < 0:
            raise ConfigError("battery must be >= 0")
        if len(self.e_sense) < self.types:
            raise ConfigError(f"need {self.types} sensing energies, got {len(self.e_sense)}")
        if any(e <= 0 for e in self.e_sense[:self.types]) or self.e_overhead < 0:
            raise ConfigError("sensing energies must be > 0 and overhead >= 0")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if min(self.price_sd, self.duration_sd_h, self.interval_sd_min) < 0:
            raise ConfigError("spreads must be >= 0")

    @property
    def interval_sd(self) -> float:
        if self.interval_spread_is_variance:
            return math.sqrt(self.interval_sd_min)
        return self.interval_sd_min

    def to_dict(self) -> dict:
        d = asdict(self)
        d["e_sense"] = list(self.e_sense)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if "e_sense" in data:
            data["e_sense"] = tuple(float(x) for x in data["e_sense"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


BASELINE = SimConfig()
# demand-count sweep preset: 10 data types requested by 50 buyers
WIDE = SimConfig(types=10, buyers=50)

PRESETS: Dict[str, SimConfig] = {"default": BASELINE, "baseline": BASELINE, "wide": WIDE}


def truncated_normal(rng: np.random.Generator, mean: float, sd: float, low: float,
                     size: int, *, strict: bool = False) -> np.ndarray:
    """Normal draws conditioned on ``x >= low`` (``x > low`` if strict) by resampling."""
    out = rng.normal(mean, sd, size)
    bad = out <= low if strict else out < low
    while bad.any():
        out[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = out <= low if strict else out < low
    return out


def _streams(config: SimConfig, seed: int) -> Tuple[np.random.Generator, np.random.Generator]:
    return (np.random.default_rng([config.rng_seed, seed, 0]),
            np.random.default_rng([config.rng_seed, seed, 1]))


def draw_devices(config: SimConfig, rng: np.random.Generator) -> List[Device]:
    ladder = np.array(QUALITY_LADDER)
    devices = []
    for i in range(config.devices):
        caps = rng.choice(ladder, size=config.types)
        prices = truncated_normal(rng, config.price_mean, config.price_sd, 0.0,
                                  config.types, strict=True)
        devices.append(Device(
            id=f"dev{i}",
            battery=float(config.battery),
            quality_cap={j: int(caps[j]) for j in range(config.types)},
            unit_price={j: float(prices[j]) for j in range(config.types)},
            per_sample_energy={j: float(config.e_sense[j]) for j in range(config.types)},
            overhead_energy=float(config.e_overhead),
        ))
    return devices


def draw_demands(config: SimConfig, rng: np.random.Generator) -> List[Demand]:
    pairs = config.buyers * config.types
    # quality is a property of the buyer and shared by all of its demands
    buyer_quality = rng.choice(np.array(QUALITY_LADDER), size=config.buyers)
    order = rng.permutation(pairs)
    duration = truncated_normal(rng, config.duration_mean_h, config.duration_sd_h,
                                config.min_duration_h, pairs)
    interval = truncated_normal(rng, config.interval_mean_min, config.interval_sd,
                                config.min_interval_min, pairs)
    demands = []
    for slot in range(config.demands):
        buyer, dtype = divmod(int(order[slot]), config.types)
        demands.append(Demand(
            buyer=buyer,
            data_type=dtype,
            duration=float(duration[slot]),
            sampling_interval=float(interval[slot]) / 60.0,
            quality=int(buyer_quality[buyer]),
        ))
    return demands


def generate_scenario(config: SimConfig, seed: int) -> Scenario:
    dev_rng, dem_rng = _streams(config, seed)
    return Scenario(tuple(draw_devices(config, dev_rng)),
                    tuple(draw_demands(config, dem_rng)), seed)


# -- sweeps ----------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    sweep_value: str
    mean_revenue: float
    mean_residual_abs: float
    mean_residual_pct: float
    mean_selected: float
    iterations: int


@dataclass(frozen=True)
class SweepResult:
    variable: str
    points: Tuple[SweepPoint, ...]
    fit: Optional[Dict[str, float]] = None

    @property
    def revenues(self) -> List[float]:
        return [p.mean_revenue for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for p in self.points:
            w.writerow([p.sweep_value, repr(p.mean_revenue), repr(p.mean_residual_abs),
                        repr(p.mean_residual_pct), repr(p.mean_selected), p.iterations])
        if self.fit:
            for name in sorted(self.fit):
                w.writerow([f"# {name}", repr(self.fit[name]), "", "", "", ""])
        return buf.getvalue()


CSV_COLUMNS = ("sweep_value", "mean_revenue", "mean_residual_abs", "mean_residual_pct",
               "mean_selected", "iterations")


def _one(args: Tuple[SimConfig, int]) -> Tuple[float, float, float, int]:
    config, seed = args
    scenario = generate_scenario(config, seed)
    plan = solve_greedy(scenario).plan
    residual = math.fsum(plan.residual_battery.values())
    capacity = math.fsum(d.battery for d in scenario.devices)
    pct = 100.0 * residual / capacity if capacity > 0 else 0.0
    return plan.revenue, residual, pct, len(plan.assignments)


def _point(config: SimConfig, label: str, jobs: int = 1) -> SweepPoint:
    tasks = [(config, s) for s in range(config.iterations)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        rows = [_one(t) for t in tasks]
    # rows are in seed order whatever the executor did, so the reduction is stable
    n = len(rows)
    return SweepPoint(
        sweep_value=label,
        mean_revenue=math.fsum(r[0] for r in rows) / n,
        mean_residual_abs=math.fsum(r[1] for r in rows) / n,
        mean_residual_pct=math.fsum(r[2] for r in rows) / n,
        mean_selected=math.fsum(r[3] for r in rows) / n,
        iterations=n,
    )


def sweep_demands(config: SimConfig = WIDE, grid: Sequence[int] = DEMAND_GRID,
                  jobs: int = 1) -> SweepResult:
    if not grid:
        raise ConfigError("grid must be non-empty")
    points = tuple(_point(replace(config, demands=int(n)), str(int(n)), jobs) for n in grid)
    return SweepResult("demands", points)


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> Dict[str, float]:
    x, y = np.asarray(xs, float), np.asarray(ys, float)
    slope, intercept = np.polyfit(x, y, 1)
    corr = float(np.corrcoef(x, y)[0, 1]) if len(x) > 1 and np.std(y) > 0 else float("nan")
    return {"slope": float(slope), "intercept": float(intercept), "correlation": corr}


def sweep_battery(config: SimConfig = replace(BASELINE, devices=1),
                  grid: Sequence[float] = BATTERY_GRID, jobs: int = 1) -> SweepResult:
    if config.devices != 1:
        raise ConfigError("battery sweep expects a single-device config")
    if not grid:
        raise ConfigError("grid must be non-empty")
    points = tuple(_point(replace(config, battery=float(b)), _fmt(b), jobs) for b in grid)
    fit = linear_fit(list(grid), [p.mean_revenue for p in points]) if len(grid) > 1 else None
    return SweepResult("battery", points, fit)


def sweep_device_split(config: SimConfig = BASELINE,
                       splits: Sequence[Tuple[int, float]] = DEVICE_SPLITS,
                       jobs: int = 1) -> SweepResult:
    totals = {round(n * b, 9) for n, b in splits}
    if len(totals) != 1:
        raise ConfigError(f"splits must share one total capacity, got {sorted(totals)}")
    ordered = sorted(splits, key=lambda s: -s[0])
    points = tuple(
        _point(replace(config, devices=int(n), battery=float(b)), f"{int(n)}x{_fmt(b)}", jobs)
        for n, b in ordered
    )
    return SweepResult("devices", points)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def mean_demand_energy(config: SimConfig, samples: int = 2000) -> float:
    """Average energy of one demand under ``config`` (diagnostic for calibration)."""
    rng = np.random.default_rng([config.rng_seed, 999])
    total = 0.0
    for _ in range(samples):
        dur = truncated_normal(rng, config.duration_mean_h, config.duration_sd_h,
                               config.min_duration_h, 1)[0]
        itv = truncated_normal(rng, config.interval_mean_min, config.interval_sd,
                               config.min_interval_min, 1)[0]
        j = int(rng.integers(config.types))
        d = Demand(0, j, float(dur), float(itv) / 60.0, 10)
        total += sample_count(d) * (config.e_sense[j] + config.e_overhead)
    return total / samples


# -- end to end ------------------------------------------------------------

SELLER = "seller"


@dataclass(frozen=True)
class TradeRecord:
    sid: str
    buyer: str
    device: str
    data_type: int
    samples: int
    resolution: str
    invoice: Optional[float]


@dataclass(frozen=True)
class Transcript:
    seed: int
    plan_revenue: float
    revenue: float
    trades: Tuple[TradeRecord, ...]
    reputation: Dict[str, Tuple[float, float]]
    log_head: str
    state_digest: str
    ledger: object = field(repr=False, compare=False, default=None)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "plan_revenue": self.plan_revenue,
            "revenue": self.revenue,
            "trades": [asdict(t) for t in self.trades],
            "reputation": {a: list(v) for a, v in sorted(self.reputation.items())},
            "log_head": self.log_head,
            "state_digest": self.state_digest,
        }


def run_end_to_end(config: SimConfig, seed: int, *, mismatch: Sequence[int] = (),
                   no_show: Sequence[int] = (), no_show_party: str = "seller",
                   risk_score: float = 0.0) -> Transcript:
    """Solve one scenario greedily, then trade every selected demand on a fresh ledger.

    ``mismatch`` and ``no_show`` are positions in the plan's assignment order:
    at a mismatch the buyer meters one sample fewer than the seller; at a
    no-show ``no_show_party`` never settles and the window is left to expire.
    """
    # imported here to keep the sweep workers light
    from .ledger import Genesis, Ledger, Meter, TxKind, make_tx
    from .model import demand_revenue
    from .pricing import quality_score
    from .signing import device_hash

    scenario = generate_scenario(config, seed)
    plan = solve_greedy(scenario).plan
    by_key = {d.key: d for d in scenario.demands}
    devices = {d.id: d for d in scenario.devices}
    buyers = sorted({f"buyer{key[0]}" for _, key in plan.assignments})
    macs = {d.id: device_hash(f"mac:{seed}:{d.id}") for d in scenario.devices}
    genesis, keys = Genesis.for_actors({SELLER: list(macs.values()), **{b: [] for b in buyers}})
    ledger = Ledger(genesis)
    meter = Meter(ledger)
    rng = np.random.default_rng([config.rng_seed, seed, 2])
    before = {a: ledger.reputation.score(a) for a in [SELLER, *buyers]}

    clock = 0.0
    cids: Dict[str, str] = {}
    for b in buyers:
        entry = ledger.submit(make_tx(TxKind.CREATE, {
            "seller": SELLER, "buyer": b, "dsc_address": f"dsc:{SELLER}:{b}",
            "abis": ["subscriptionAdd", "subscriptionInfo", "subscriptionStart",
                     "subscriptionSettlement", "subscriptionDelete"],
        }, [SELLER, b], keys, clock))
        cids[b] = entry.cid

    trades = []
    for pos, (dev_id, key) in enumerate(plan.assignments):
        demand, device = by_key[key], devices[dev_id]
        buyer = f"buyer{key[0]}"
        n = sample_count(demand)
        unit_price = demand_revenue(device, demand) / n
        clock += 1.0
        sub = ledger.submit(make_tx(TxKind.ADD, {
            "cid": cids[buyer], "buyer": buyer, "device_hash": macs[dev_id],
            "data_type": demand.data_type, "start_time": clock,
            "periodicity": demand.sampling_interval * 3600.0,
            "duration": demand.duration * 3600.0,
            "quality_score": quality_score(demand.quality), "risk_score": risk_score,
            "unit_price": unit_price, "total_cost": n * unit_price,
            "payment_granularity": n, "negotiation_info": "",
        }, [SELLER], keys, clock))
        ledger.submit(make_tx(TxKind.START, {"sid": sub.sid}, [SELLER], keys, clock))
        meter.report(sub.sid, SELLER, n)
        meter.report(sub.sid, buyer, n - 1 if pos in mismatch and n > 1 else n)
        clock += demand.duration * 3600.0

        f_seller, f_buyer = (float(x) for x in rng.uniform(0.6, 0.95, 2))
        settlers = {SELLER: f_seller, buyer: f_buyer}
        if pos in no_show:
            settlers.pop(SELLER if no_show_party == "seller" else buyer)
        outcome = None
        for actor, fb in settlers.items():
            clock += 1.0
            outcome = ledger.submit(make_tx(TxKind.SETTLE, {
                "sid": sub.sid, "count": max(1, meter.count(sub.sid, actor)), "feedback": fb,
            }, [actor], keys, clock))
        if pos in no_show:
            clock += genesis.settle_timeout + 1.0
            ledger.submit(make_tx(TxKind.EXPIRE, {"sid": sub.sid}, [], keys, clock))
            outcome = ledger.outcomes[sub.sid]
        clock += 1.0
        ledger.submit(make_tx(TxKind.DELETE, {"sid": sub.sid}, [SELLER], keys, clock))
        trades.append(TradeRecord(sub.sid, buyer, dev_id, demand.data_type, n,
                                  outcome.resolution.value, outcome.invoice))

    revenue = math.fsum(t.invoice for t in trades if t.invoice is not None)
    after = {a: ledger.reputation.score(a) for a in before}
    return Transcript(seed, plan.revenue, revenue, tuple(trades),
                      {a: (before[a], after[a]) for a in before},
                      ledger.head, ledger.state_digest(), ledger)
