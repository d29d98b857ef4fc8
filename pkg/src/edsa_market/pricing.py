"""Competition-based pricing: an append-only price ledger and quotes built on it.

Each traded record is normalized into a price index by its quality and
privacy-risk scores; the base price for a data type is the mean index over a
time window, and the final price scales the base back up by the scores of the
offer at hand plus an agreed share of the execution fee.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

Window = Tuple[float, float]  # half-open [start, end)


class PricingError(ValueError):
    pass


class NoMarketData(PricingError):
    """The requested window holds no records for the data type."""


def _unit(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise PricingError(f"{name} must lie in [0, 1], got {x!r}")


@dataclass(frozen=True)
class PriceRecord:
    timestamp: float
    data_type: int
    price: float
    quality_score: float
    risk_score: float

    def __post_init__(self) -> None:
        if not self.price > 0:
            raise PricingError(f"price must be > 0, got {self.price!r}")
        _unit("quality_score", self.quality_score)
        _unit("risk_score", self.risk_score)


@dataclass(frozen=True)
class PriceQuote:
    data_type: int
    base_price: float
    final_price: float
    qs: float
    rs: float
    beta: float
    exe_fee: float
    window: Window
    sample_size: int


def price_index(record: PriceRecord) -> float:
    return record.price / (record.quality_score + record.risk_score + 1.0)


def final_price(base: float, qs: float, rs: float, beta: float, exe_fee: float) -> float:
    return (1.0 + qs + rs) * base + beta * exe_fee


def quality_score(quality: int, preferences: Sequence[float] = (),
                  weights: Optional[Sequence[float]] = None) -> float:
    """Weighted average of the demanded quality level (as q/100) and any
    extra preference scores in [0, 1]. With no preferences this is q/100."""
    parts = [quality / 100.0, *preferences]
    for p in parts:
        _unit("preference", p)
    if weights is None:
        weights = [1.0] * len(parts)
    if len(weights) != len(parts) or any(w < 0 for w in weights) or sum(weights) <= 0:
        raise PricingError("weights must be non-negative, non-empty and match the parts")
    return math.fsum(w * p for w, p in zip(weights, parts)) / math.fsum(weights)


def _check_window(window: Window) -> None:
    start, end = window
    if not start <= end:
        raise PricingError(f"window start {start!r} is after end {end!r}")


class PriceLedger:
    """Append-only price records; single writer, many readers.

    ``path`` (optional) mirrors every append to a newline-delimited JSON file.
    """

    def __init__(self, path: Optional[Path | str] = None):
        self._records: List[PriceRecord] = []
        self._by_type: Dict[int, List[int]] = {}
        self._lock = threading.Lock()
        self.path = Path(path) if path is not None else None
        if self.path is not None and self.path.exists():
            for rec in load_records(self.path):
                self._append(rec)

    def __getstate__(self) -> dict:
        state = dict(self.__dict__)
        del state["_lock"]
        return state

    def __setstate__(self, state: dict) -> None:
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._records)

    @property
    def records(self) -> Tuple[PriceRecord, ...]:
        return tuple(self._records)

    def _append(self, record: PriceRecord) -> int:
        slots = self._by_type.setdefault(record.data_type, [])
        if slots and record.timestamp < self._records[slots[-1]].timestamp:
            raise PricingError(
                f"record for type {record.data_type} at {record.timestamp!r} predates "
                f"the last one at {self._records[slots[-1]].timestamp!r}")
        self._records.append(record)
        slots.append(len(self._records) - 1)
        return len(self._records) - 1

    def record_price(self, record: PriceRecord) -> int:
        with self._lock:
            position = self._append(record)
            if self.path is not None:
                with self.path.open("a") as fh:
                    fh.write(record_line(record))
            return position

    def for_type(self, data_type: int, window: Optional[Window] = None) -> List[PriceRecord]:
        rows = [self._records[i] for i in self._by_type.get(data_type, [])]
        if window is None:
            return rows
        _check_window(window)
        start, end = window
        return [r for r in rows if start <= r.timestamp < end]

    def base_price(self, data_type: int, window: Window) -> Optional[float]:
        """Mean price index over the window, or None when there is no market data."""
        rows = self.for_type(data_type, window)
        if not rows:
            return None
        return math.fsum(price_index(r) for r in rows) / len(rows)

    def quote(self, data_type: int, window: Window, qs: float, rs: float,
              beta: float, exe_fee: float) -> PriceQuote:
        _unit("qs", qs)
        _unit("rs", rs)
        _unit("beta", beta)
        if exe_fee < 0:
            raise PricingError("execution fee must be >= 0")
        rows = self.for_type(data_type, window)
        if not rows:
            raise NoMarketData(f"no price records for type {data_type} in {window}")
        base = math.fsum(price_index(r) for r in rows) / len(rows)
        return PriceQuote(data_type, base, final_price(base, qs, rs, beta, exe_fee),
                          qs, rs, beta, exe_fee, tuple(window), len(rows))


def record_line(record: PriceRecord) -> str:
    return json.dumps(asdict(record), sort_keys=True) + "\n"


def load_records(path: Path | str) -> Iterable[PriceRecord]:
    with Path(path).open() as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield PriceRecord(**json.loads(line))
            except (json.JSONDecodeError, TypeError) as exc:
                raise PricingError(f"{path}:{n}: bad price record ({exc})") from exc
