"""Domain types shared by the solver, pricing, reputation, ledger and simulator.

Energy and battery share one abstract unit (mAh-equivalent in scenarios);
currency is abstract. All types are immutable once built.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Tuple

QUALITY_LADDER: Tuple[int, ...] = tuple(range(10, 101, 10))

DataType = int
DemandKey = Tuple[int, int]  # (buyer, data_type)

# hook for P_ij(q): multiplies the unit price by a factor of the demanded quality
PriceFactor = Callable[[int], float]


class ModelError(ValueError):
    """Raised when a domain object violates its invariants."""


def _unit_factor(quality: int) -> float:
    return 1.0


@dataclass(frozen=True)
class Device:
    id: str
    battery: float
    quality_cap: Mapping[DataType, int]
    unit_price: Mapping[DataType, float]
    per_sample_energy: Mapping[DataType, float]
    overhead_energy: float = 0.0

    def __post_init__(self) -> None:
        if not self.battery >= 0:
            raise ModelError(f"device {self.id}: battery must be >= 0, got {self.battery}")
        if self.overhead_energy < 0:
            raise ModelError(f"device {self.id}: overhead energy must be >= 0")
        for t, q in self.quality_cap.items():
            if q not in QUALITY_LADDER:
                raise ModelError(f"device {self.id}: quality cap {q} for type {t} not on ladder")
        for t, p in self.unit_price.items():
            if not p > 0:
                raise ModelError(f"device {self.id}: unit price for type {t} must be > 0")
        for t, e in self.per_sample_energy.items():
            if not e > 0:
                raise ModelError(f"device {self.id}: per-sample energy for type {t} must be > 0")
        missing = set(self.quality_cap) ^ set(self.unit_price)
        missing |= set(self.quality_cap) ^ set(self.per_sample_energy)
        if missing:
            raise ModelError(f"device {self.id}: inconsistent offered types {sorted(missing)}")

    def offers(self, data_type: DataType) -> bool:
        return data_type in self.quality_cap

    def with_battery(self, battery: float) -> "Device":
        return Device(self.id, battery, self.quality_cap, self.unit_price,
                      self.per_sample_energy, self.overhead_energy)


@dataclass(frozen=True)
class Demand:
    buyer: int
    data_type: DataType
    duration: float
    sampling_interval: float
    quality: int

    def __post_init__(self) -> None:
        if not self.duration > 0:
            raise ModelError(f"demand {self.key}: duration must be > 0")
        if not self.sampling_interval > 0:
            raise ModelError(f"demand {self.key}: sampling interval must be > 0")
        if self.quality not in QUALITY_LADDER:
            raise ModelError(f"demand {self.key}: quality {self.quality} not on ladder")

    @property
    def key(self) -> DemandKey:
        return (self.buyer, self.data_type)


@dataclass(frozen=True)
class AllocationPlan:
    assignments: Tuple[Tuple[str, DemandKey], ...]
    revenue: float
    residual_battery: Mapping[str, float]

    def device_of(self) -> Dict[DemandKey, str]:
        return {key: dev for dev, key in self.assignments}


@dataclass(frozen=True)
class Scenario:
    devices: Tuple[Device, ...]
    demands: Tuple[Demand, ...] = ()
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.devices:
            raise ModelError("scenario needs at least one device")
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise ModelError("device ids must be unique")
        keys = [d.key for d in self.demands]
        if len(set(keys)) != len(keys):
            raise ModelError("at most one demand per (buyer, data_type)")

    def device(self, device_id: str) -> Device:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def demand(self, key: DemandKey) -> Demand:
        for d in self.demands:
            if d.key == key:
                return d
        raise KeyError(key)


def sample_count(demand: Demand) -> int:
    """Number of samples needed to cover the demanded duration.

    A partial trailing interval still costs a sample, so this is a ceiling.
    Ratios within 1e-9 of an integer are treated as exact to absorb float noise
    such as ``5 / (1/6)``.
    """
    if not demand.duration > 0 or not demand.sampling_interval > 0:
        raise ModelError("duration and sampling interval must be positive")
    ratio = demand.duration / demand.sampling_interval
    nearest = round(ratio)
    if nearest >= 1 and math.isclose(ratio, nearest, rel_tol=1e-9):
        return int(nearest)
    return max(1, math.ceil(ratio))


def energy_cost(device: Device, demand: Demand) -> float:
    if not device.offers(demand.data_type):
        raise ModelError(f"device {device.id} does not offer type {demand.data_type}")
    per_sample = device.per_sample_energy[demand.data_type] + device.overhead_energy
    return sample_count(demand) * per_sample


def demand_revenue(device: Device, demand: Demand,
                   price_factor: Optional[PriceFactor] = None) -> float:
    if not device.offers(demand.data_type):
        raise ModelError(f"device {device.id} does not offer type {demand.data_type}")
    factor = (price_factor or _unit_factor)(demand.quality)
    return sample_count(demand) * device.unit_price[demand.data_type] * factor


def quality_ok(device: Device, demand: Demand) -> bool:
    return device.offers(demand.data_type) and demand.quality <= device.quality_cap[demand.data_type]


# -- serialization ---------------------------------------------------------

SCENARIO_FORMAT = "edsa-scenario/1"


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "format": SCENARIO_FORMAT,
        "seed": scenario.seed,
        "devices": [
            {
                "id": d.id,
                "battery": d.battery,
                "overhead_energy": d.overhead_energy,
                "types": [
                    {
                        "type": t,
                        "quality_cap": d.quality_cap[t],
                        "unit_price": d.unit_price[t],
                        "per_sample_energy": d.per_sample_energy[t],
                    }
                    for t in sorted(d.quality_cap)
                ],
            }
            for d in scenario.devices
        ],
        "demands": [
            {
                "buyer": m.buyer,
                "type": m.data_type,
                "duration": m.duration,
                "sampling_interval": m.sampling_interval,
                "quality": m.quality,
            }
            for m in scenario.demands
        ],
    }


def scenario_from_dict(data: dict) -> Scenario:
    fmt = data.get("format", SCENARIO_FORMAT)
    if fmt != SCENARIO_FORMAT:
        raise ModelError(f"unsupported scenario format {fmt!r}")
    try:
        devices = []
        for raw in data["devices"]:
            types = raw.get("types", [])
            devices.append(Device(
                id=str(raw["id"]),
                battery=float(raw["battery"]),
                overhead_energy=float(raw.get("overhead_energy", 0.0)),
                quality_cap={int(t["type"]): int(t["quality_cap"]) for t in types},
                unit_price={int(t["type"]): float(t["unit_price"]) for t in types},
                per_sample_energy={int(t["type"]): float(t["per_sample_energy"]) for t in types},
            ))
        demands = [
            Demand(
                buyer=int(raw["buyer"]),
                data_type=int(raw["type"]),
                duration=float(raw["duration"]),
                sampling_interval=float(raw["sampling_interval"]),
                quality=int(raw["quality"]),
            )
            for raw in data.get("demands", [])
        ]
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed scenario: {exc!r}") from exc
    return Scenario(tuple(devices), tuple(demands), data.get("seed"))


def dumps_scenario(scenario: Scenario) -> str:
    return json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n"


def loads_scenario(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"scenario is not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


def load_scenario(path: Path | str) -> Scenario:
    return loads_scenario(Path(path).read_text())


def demand_keys(demands: Iterable[Demand]) -> List[DemandKey]:
    return [d.key for d in demands]
