"""Actor reputation from post-settlement feedback.

After every successful trade the ratee's score moves toward the feedback it
received by a step ``alpha = (FC + TV) * CA``:

* FC (feedback credibility) weighs the rater's standing against the ratee's
  and the share of positive feedback the rater has handed out, so low-ranked
  or habitually negative raters carry little weight;
* TV (transaction weight) is the trade's value relative to the largest trade
  the ratee has done, which blunts strike-and-recharge;
* CA (collusion attenuation) decays with the number of back-to-back trades
  between the same pair.

The result is further aged by ``exp(-failed / total)`` contracts. A contract
violation instead multiplies the score by ``2 - 2 ** (failed / total)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

NEUTRAL_SCORE = 0.5
POSITIVE_THRESHOLD = 0.5


class ReputationError(ValueError):
    pass


@dataclass(frozen=True)
class ReputationConfig:
    collusion_exponent: int = 2
    burst_window: float = 3600.0
    initial_score: float = NEUTRAL_SCORE
    # whose tallies feed FC: feedback the rater has "given", or the ratee has "received"
    feedback_direction: str = "given"

    def __post_init__(self) -> None:
        if self.collusion_exponent < 1 or int(self.collusion_exponent) != self.collusion_exponent:
            raise ReputationError("collusion exponent must be a positive integer")
        if self.burst_window < 0:
            raise ReputationError("burst window must be >= 0")
        if not 0.0 <= self.initial_score <= 1.0:
            raise ReputationError("initial score must lie in [0, 1]")
        if self.feedback_direction not in ("given", "received"):
            raise ReputationError("feedback_direction must be 'given' or 'received'")


@dataclass(frozen=True)
class ReputationRecord:
    actor: str
    score: float = NEUTRAL_SCORE
    feedback_pos_given: int = 0
    feedback_neg_given: int = 0
    feedback_pos_received: int = 0
    feedback_neg_received: int = 0
    contracts_failed: int = 0
    contracts_total: int = 0
    max_transaction_value: float = 0.0
    last_request_time: Optional[float] = None
    pair_burst_counts: Mapping[str, int] = field(default_factory=dict)
    collusion_exponent: int = 2

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ReputationError(f"{self.actor}: score {self.score!r} outside [0, 1]")
        if self.contracts_failed > self.contracts_total:
            raise ReputationError(f"{self.actor}: more failed than total contracts")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pair_burst_counts"] = dict(sorted(self.pair_burst_counts.items()))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ReputationRecord":
        return cls(**d)


@dataclass(frozen=True)
class RatingEvent:
    """One settled trade: ``actor_i`` receives ``feedback_i``, ``actor_j`` receives ``feedback_j``."""

    actor_i: str
    actor_j: str
    t_value: float
    feedback_i: float
    feedback_j: float
    event_time: float

    def __post_init__(self) -> None:
        for f in (self.feedback_i, self.feedback_j):
            if not 0.0 < f < 1.0:
                raise ReputationError(f"feedback must lie strictly inside (0, 1), got {f!r}")
        if not self.t_value > 0:
            raise ReputationError("transaction value must be > 0")
        if self.actor_i == self.actor_j:
            raise ReputationError("an actor cannot rate itself")

    def reversed(self) -> "RatingEvent":
        return RatingEvent(self.actor_j, self.actor_i, self.t_value,
                           self.feedback_j, self.feedback_i, self.event_time)


def feedback_credibility(rater_score: float, ratee_score: float,
                         positive: int, negative: int) -> float:
    """``R_i / (R_i + R_j) * F+ / (F- + F+)``; zero when either denominator is zero."""
    if rater_score + ratee_score <= 0 or positive + negative <= 0:
        return 0.0
    return rater_score / (rater_score + ratee_score) * (positive / (positive + negative))


def transaction_weight(t_value: float, v_max: float) -> float:
    if v_max <= 0:
        raise ReputationError("v_max must be > 0 once the current trade is counted")
    return t_value / v_max


def collusion_factor(pair_count: int, exponent: int) -> float:
    if pair_count < 1:
        raise ReputationError("pair count starts at 1 for the first interaction")
    return (1.0 / pair_count) ** exponent


def aging_factor(failed: int, total: int) -> float:
    return math.exp(-failed / total) if total > 0 else 1.0


def violation_factor(failed: int, total: int) -> float:
    if total <= 0:
        return 1.0
    return 2.0 - 2.0 ** (failed / total)


def tuning_factor(fc: float, tv: float, ca: float) -> float:
    # FC + TV can reach 2; clamp so the update stays a convex combination
    return min(1.0, max(0.0, (fc + tv) * ca))


def _burst(record: ReputationRecord, counterparty: str, now: float,
           window: float) -> Dict[str, int]:
    last = record.last_request_time
    if last is not None and 0.0 <= now - last <= window:
        counts = dict(record.pair_burst_counts)
    else:
        counts = {}
    counts[counterparty] = counts.get(counterparty, 0) + 1
    return counts


def count_feedback(record: ReputationRecord, value: float, *, given: bool) -> ReputationRecord:
    positive = value >= POSITIVE_THRESHOLD
    if given:
        return replace(record,
                       feedback_pos_given=record.feedback_pos_given + positive,
                       feedback_neg_given=record.feedback_neg_given + (not positive))
    return replace(record,
                   feedback_pos_received=record.feedback_pos_received + positive,
                   feedback_neg_received=record.feedback_neg_received + (not positive))


def apply_rating(ratee: ReputationRecord, rater: ReputationRecord, event: RatingEvent,
                 config: ReputationConfig = ReputationConfig()) -> ReputationRecord:
    """Update ``ratee`` (``event.actor_j``) with the feedback ``event.feedback_j``.

    ``rater`` is taken as-is: its tallies should already include the feedback
    it is handing out in this event (``ReputationBook`` takes care of that).
    """
    if ratee.actor != event.actor_j or rater.actor != event.actor_i:
        raise ReputationError(
            f"event rates {event.actor_j!r} by {event.actor_i!r}, got records "
            f"{ratee.actor!r} and {rater.actor!r}")
    v_max = max(ratee.max_transaction_value, event.t_value)
    tv = transaction_weight(event.t_value, v_max)
    bursts = _burst(ratee, event.actor_i, event.event_time, config.burst_window)
    ca = collusion_factor(bursts[event.actor_i], config.collusion_exponent)
    total = ratee.contracts_total + 1

    if config.feedback_direction == "given":
        pos, neg = rater.feedback_pos_given, rater.feedback_neg_given
    else:
        received = count_feedback(ratee, event.feedback_j, given=False)
        pos, neg = received.feedback_pos_received, received.feedback_neg_received
    fc = feedback_credibility(rater.score, ratee.score, pos, neg)
    alpha = tuning_factor(fc, tv, ca)
    score = ((1.0 - alpha) * ratee.score + alpha * event.feedback_j) * aging_factor(
        ratee.contracts_failed, total)

    updated = replace(
        ratee,
        score=min(1.0, max(0.0, score)),
        contracts_total=total,
        max_transaction_value=v_max,
        last_request_time=event.event_time,
        pair_burst_counts=bursts,
        collusion_exponent=config.collusion_exponent,
    )
    return count_feedback(updated, event.feedback_j, given=False)


def apply_violation(ratee: ReputationRecord) -> ReputationRecord:
    failed = ratee.contracts_failed + 1
    total = ratee.contracts_total + 1
    vf = violation_factor(failed, total)
    return replace(ratee, score=min(1.0, max(0.0, ratee.score * vf)),
                   contracts_failed=failed, contracts_total=total)


class ReputationBook:
    """Reputation store: append-only event log plus materialized records.

    Updates are serialized by the caller (one writer); ``snapshot`` returns an
    immutable copy for readers.
    """

    def __init__(self, config: ReputationConfig = ReputationConfig()):
        self.config = config
        self._records: Dict[str, ReputationRecord] = {}
        self.log: List[dict] = []

    def get(self, actor: str) -> ReputationRecord:
        rec = self._records.get(actor)
        if rec is None:
            rec = ReputationRecord(actor, score=self.config.initial_score,
                                   collusion_exponent=self.config.collusion_exponent)
        return rec

    def known(self, actor: str) -> bool:
        return actor in self._records

    def score(self, actor: str) -> float:
        return self.get(actor).score

    def snapshot(self) -> Dict[str, ReputationRecord]:
        return dict(self._records)

    def rate(self, event: RatingEvent) -> Tuple[ReputationRecord, ReputationRecord]:
        """Apply both directions of a settled trade; returns (record_i, record_j).

        Both updates read the pre-event scores, so the order does not matter.
        """
        before_i, before_j = self.get(event.actor_i), self.get(event.actor_j)
        rater_i = count_feedback(before_i, event.feedback_j, given=True)
        rater_j = count_feedback(before_j, event.feedback_i, given=True)
        new_j = apply_rating(replace(before_j, feedback_pos_given=rater_j.feedback_pos_given,
                                     feedback_neg_given=rater_j.feedback_neg_given),
                             rater_i, event, self.config)
        new_i = apply_rating(replace(before_i, feedback_pos_given=rater_i.feedback_pos_given,
                                     feedback_neg_given=rater_i.feedback_neg_given),
                             rater_j, event.reversed(), self.config)
        self._records[event.actor_i] = new_i
        self._records[event.actor_j] = new_j
        self.log.append({"kind": "rate", **asdict(event)})
        return new_i, new_j

    def violation(self, actor: str, at: Optional[float] = None) -> ReputationRecord:
        new = apply_violation(self.get(actor))
        self._records[actor] = new
        self.log.append({"kind": "violation", "actor": actor, "time": at})
        return new

    # -- persistence --------------------------------------------------------

    def state(self) -> dict:
        return {a: self._records[a].to_dict() for a in sorted(self._records)}

    def save(self, log_path: Path | str, snapshot_path: Path | str) -> None:
        Path(log_path).write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in self.log))
        Path(snapshot_path).write_text(json.dumps(
            {"config": asdict(self.config), "records": self.state()}, indent=2, sort_keys=True) + "\n")

    @classmethod
    def replay(cls, entries: List[dict],
               config: ReputationConfig = ReputationConfig()) -> "ReputationBook":
        book = cls(config)
        for e in entries:
            e = dict(e)
            kind = e.pop("kind")
            if kind == "rate":
                book.rate(RatingEvent(**e))
            elif kind == "violation":
                book.violation(e["actor"], e.get("time"))
            else:
                raise ReputationError(f"unknown reputation log entry {kind!r}")
        return book

    @classmethod
    def load(cls, log_path: Path | str,
             config: ReputationConfig = ReputationConfig()) -> "ReputationBook":
        path = Path(log_path)
        entries = []
        if path.exists():
            entries = [json.loads(line) for line in path.read_text().splitlines() if line.strip()]
        return cls.replay(entries, config)
