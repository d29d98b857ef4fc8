"""In-process trade ledger: registration, subscriptions, settlement, rating.

A single sequential writer applies signed transactions to a materialized state
and appends each accepted state-changing transaction to a hash-chained log.
Replaying that log from its genesis header rebuilds the same state, entry by
entry (each entry records the digest of the state it produced).

Log layout (one canonical-JSON object per line)::

    line 0:  {"genesis": G, "hash": H0}          H0 = sha256(canonical(G))
    line n:  {"seq": n, "prev": H(n-1), "tx": T, "state": S, "hash": Hn}
             Hn = sha256(H(n-1) + "\\n" + canonical({"seq", "tx", "state"}))

where hashes are lowercase hex, ``T`` is the transaction as sent, and ``S``
the state digest after applying it. Rejected and read-only transactions are
not logged.

Subscription lifecycle::

    Pending -> Active -> Settled  -> Deleted
                      -> Disputed -> Deleted
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .pricing import PriceLedger, PriceRecord
from .reputation import RatingEvent, ReputationBook, ReputationConfig
from .signing import Attestation, KeyRing, canonical, digest


class TxKind(str, Enum):
    ADD = "Add"
    INFO = "Info"
    START = "Start"
    SETTLE = "Settle"
    DELETE = "Delete"
    CREATE = "Create"
    REMOVE = "Remove"
    GET = "Get"
    # ledger-internal: closes a settlement window a party let lapse
    EXPIRE = "Expire"


READ_ONLY = {TxKind.INFO, TxKind.GET}


class Status(str, Enum):
    PENDING = "Pending"
    ACTIVE = "Active"
    SETTLED = "Settled"
    DISPUTED = "Disputed"
    DELETED = "Deleted"


TRANSITIONS = {
    (None, Status.PENDING),
    (Status.PENDING, Status.ACTIVE),
    (Status.ACTIVE, Status.SETTLED),
    (Status.ACTIVE, Status.DISPUTED),
    (Status.SETTLED, Status.DELETED),
    (Status.DISPUTED, Status.DELETED),
}


class Resolution(str, Enum):
    AGREED = "Agreed"
    FOR_SELLER = "ResolvedForSeller"
    FOR_BUYER = "ResolvedForBuyer"
    ESCROWED = "Escrowed"


class LedgerError(Exception):
    category = "ledger"


class AuthError(LedgerError):
    category = "auth"


class StateError(LedgerError):
    category = "state"


class NotFound(LedgerError):
    category = "not-found"


class TxInvalid(LedgerError):
    category = "invalid"


DSC_ABIS = ("subscriptionAdd", "subscriptionInfo", "subscriptionStart",
            "subscriptionSettlement", "subscriptionDelete")


@dataclass(frozen=True)
class LedgerTx:
    kind: TxKind
    payload: Mapping
    signatures: Tuple[Attestation, ...]
    payload_hash: str
    time: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "payload": dict(self.payload),
            "signatures": [a.to_dict() for a in self.signatures],
            "payload_hash": self.payload_hash,
            "time": self.time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LedgerTx":
        try:
            return cls(TxKind(d["kind"]), dict(d["payload"]),
                       tuple(Attestation(a["actor"], a["signature"]) for a in d.get("signatures", [])),
                       d["payload_hash"], float(d["time"]))
        except (KeyError, ValueError, TypeError) as exc:
            raise TxInvalid(f"malformed transaction: {exc!r}") from exc


def make_tx(kind: TxKind | str, payload: Mapping, signers: Sequence[str], keys: KeyRing,
            time: float) -> LedgerTx:
    kind = TxKind(kind)
    h = digest(dict(payload))
    return LedgerTx(kind, dict(payload), tuple(keys.sign(a, h) for a in signers), h, float(time))


@dataclass(frozen=True)
class ContractEntry:
    cid: str
    creator: str
    seller: str
    buyer: str
    seller_key: str
    buyer_key: str
    dsc_address: str
    abis: Tuple[str, ...]
    rating_hook: bool = True


@dataclass(frozen=True)
class Subscription:
    sid: str
    cid: str
    seller: str
    buyer: str
    device_hash: str
    data_type: int
    start_time: float
    periodicity: float
    duration: float
    quality_score: float
    risk_score: float
    unit_price: float
    total_cost: float
    payment_granularity: int
    status: Status
    negotiation_info: str = ""
    activated_at: Optional[float] = None

    @property
    def service_end(self) -> Optional[float]:
        return None if self.activated_at is None else self.activated_at + self.duration


@dataclass(frozen=True)
class SettlementOutcome:
    sid: str
    seller_count: Optional[int]
    buyer_count: Optional[int]
    resolution: Resolution
    invoice: Optional[float]
    payment_released: bool


@dataclass
class Genesis:
    actors: Dict[str, dict]
    settle_timeout: float = 3600.0
    reputation: dict = field(default_factory=dict)
    key_seed: str = "edsa"

    @classmethod
    def for_actors(cls, actors: Mapping[str, Sequence[str]], *, settle_timeout: float = 3600.0,
                   reputation: Optional[ReputationConfig] = None,
                   keys: Optional[KeyRing] = None) -> Tuple["Genesis", KeyRing]:
        """Genesis for ``{actor: [device hashes]}`` plus the key ring to sign with."""
        keys = keys or KeyRing.derived(actors)
        secrets = keys.secrets()
        table = {a: {"key": secrets[a], "devices": sorted(devs)} for a, devs in sorted(actors.items())}
        rep = asdict(reputation) if reputation else {}
        return cls(table, settle_timeout, rep), keys

    def to_dict(self) -> dict:
        return {"actors": self.actors, "settle_timeout": self.settle_timeout,
                "reputation": self.reputation}

    @classmethod
    def from_dict(cls, d: dict) -> "Genesis":
        return cls(dict(d["actors"]), float(d.get("settle_timeout", 3600.0)),
                   dict(d.get("reputation", {})))


def _chain(prev: str, body: dict) -> str:
    return hashlib.sha256(prev.encode("ascii") + b"\n" + canonical(body)).hexdigest()


class Ledger:
    def __init__(self, genesis: Genesis):
        self.genesis = genesis
        self.keys = KeyRing({a: v["key"] for a, v in genesis.actors.items()})
        self.devices = {a: frozenset(v.get("devices", ())) for a, v in genesis.actors.items()}
        self.contracts: Dict[str, ContractEntry] = {}
        self.removed: set = set()
        self.pairs: Dict[Tuple[str, str], str] = {}
        self.subscriptions: Dict[str, Subscription] = {}
        self.history: Dict[str, Subscription] = {}
        self.settle_pending: Dict[str, Dict[str, Tuple[int, float]]] = {}
        self.outcomes: Dict[str, SettlementOutcome] = {}
        self.invoices: List[dict] = []
        self.payments: List[dict] = []
        self.sessions: Dict[str, str] = {}
        self.prices = PriceLedger()
        self.reputation = ReputationBook(ReputationConfig(**genesis.reputation))
        self.transitions: List[Tuple[str, Optional[Status], Status]] = []
        self.clock = -math.inf
        self.next_cid = 1
        self.next_sid = 1
        self.head = digest(genesis.to_dict())
        self.log: List[dict] = []

    # -- plumbing -----------------------------------------------------------

    def clone(self) -> "Ledger":
        return copy.deepcopy(self)

    def state(self) -> dict:
        def sub(s: Subscription) -> dict:
            d = asdict(s)
            d["status"] = s.status.value
            return d

        return {
            "contracts": {c: asdict(e) for c, e in sorted(self.contracts.items())},
            "removed": sorted(self.removed),
            "subscriptions": {s: sub(v) for s, v in sorted(self.subscriptions.items())},
            "history": {s: sub(v) for s, v in sorted(self.history.items())},
            "settle_pending": {s: {a: list(v) for a, v in sorted(p.items())}
                               for s, p in sorted(self.settle_pending.items())},
            "outcomes": {s: {**asdict(o), "resolution": o.resolution.value}
                         for s, o in sorted(self.outcomes.items())},
            "invoices": self.invoices,
            "payments": self.payments,
            "sessions": dict(sorted(self.sessions.items())),
            "prices": [asdict(r) for r in self.prices.records],
            "reputation": self.reputation.state(),
            "clock": self.clock if self.clock > -math.inf else None,
            "next": [self.next_cid, self.next_sid],
        }

    def state_digest(self) -> str:
        return digest(self.state())

    def _verify(self, tx: LedgerTx, required: Iterable[str]) -> None:
        if digest(dict(tx.payload)) != tx.payload_hash:
            raise AuthError("payload hash does not match payload")
        required = list(dict.fromkeys(required))
        signers = [a.actor for a in tx.signatures]
        if len(set(signers)) != len(signers):
            raise AuthError("duplicate attestation")
        for att in tx.signatures:
            if not self.keys.verify(att, tx.payload_hash):
                raise AuthError(f"invalid signature from {att.actor!r}")
        missing = [a for a in required if a not in signers]
        if missing:
            if len(required) > 1:
                raise AuthError(f"multisig required: missing {missing}")
            raise AuthError(f"must be signed by {required[0]!r}")
        extra = [a for a in signers if a not in required]
        if extra:
            raise AuthError(f"unexpected signers {extra}")

    def _signer(self, tx: LedgerTx, allowed: Sequence[str]) -> str:
        if len(tx.signatures) != 1:
            raise AuthError("exactly one attestation expected")
        who = tx.signatures[0].actor
        if who not in allowed:
            raise AuthError(f"{who!r} is not a party to this entry")
        self._verify(tx, [who])
        return who

    @staticmethod
    def _field(payload: Mapping, name: str, kind=None):
        if name not in payload:
            raise TxInvalid(f"missing field {name!r}")
        value = payload[name]
        if kind is not None and not isinstance(value, kind) or isinstance(value, bool):
            raise TxInvalid(f"field {name!r} has wrong type")
        return value

    def _sub(self, sid) -> Subscription:
        s = self.subscriptions.get(sid)
        if s is None:
            raise NotFound(f"unknown subscription {sid!r}")
        return s

    def _contract(self, cid) -> ContractEntry:
        c = self.contracts.get(cid)
        if c is None:
            raise NotFound(f"unknown DSC {cid!r}")
        return c

    def _set_status(self, sub: Subscription, status: Status, **changes) -> Subscription:
        if (sub.status, status) not in TRANSITIONS:
            raise StateError(f"{sub.sid}: illegal transition {sub.status.value} -> {status.value}")
        new = replace(sub, status=status, **changes)
        self.transitions.append((sub.sid, sub.status, status))
        return new

    # -- entry point --------------------------------------------------------

    def submit(self, tx: LedgerTx):
        """Apply one transaction. Raises ``LedgerError`` and leaves state untouched on rejection."""
        if not isinstance(tx.kind, TxKind):
            raise TxInvalid(f"unknown kind {tx.kind!r}")
        if tx.kind in READ_ONLY:
            return self.query(tx)
        if tx.time < self.clock:
            raise TxInvalid(f"transaction time {tx.time!r} precedes ledger clock {self.clock!r}")
        handler = {
            TxKind.CREATE: self._create,
            TxKind.REMOVE: self._remove,
            TxKind.ADD: self._add,
            TxKind.START: self._start,
            TxKind.SETTLE: self._settle,
            TxKind.DELETE: self._delete,
            TxKind.EXPIRE: self._expire,
        }[tx.kind]
        # handlers validate fully before their first write
        result = handler(tx)
        self.clock = tx.time
        self._append_log(tx)
        return result

    def query(self, tx: LedgerTx):
        if tx.kind == TxKind.INFO:
            sub = self._sub(self._field(tx.payload, "sid", str))
            self._signer(tx, [sub.seller, sub.buyer])
            return sub
        if tx.kind == TxKind.GET:
            entry = self._contract(self._field(tx.payload, "cid", str))
            self._signer(tx, [entry.seller, entry.buyer])
            return entry
        raise TxInvalid(f"{tx.kind.value} is not a query")

    def _append_log(self, tx: LedgerTx) -> None:
        body = {"seq": len(self.log) + 1, "tx": tx.to_dict(), "state": self.state_digest()}
        h = _chain(self.head, body)
        self.log.append({**body, "prev": self.head, "hash": h})
        self.head = h

    # -- register contract --------------------------------------------------

    def _create(self, tx: LedgerTx) -> ContractEntry:
        p = tx.payload
        seller = self._field(p, "seller", str)
        buyer = self._field(p, "buyer", str)
        address = self._field(p, "dsc_address", str)
        abis = tuple(p.get("abis", DSC_ABIS))
        if seller == buyer:
            raise TxInvalid("seller and buyer must differ")
        for a in (seller, buyer):
            if a not in self.keys:
                raise AuthError(f"unknown actor {a!r}")
        self._verify(tx, [seller, buyer])
        if (seller, buyer) in self.pairs:
            raise StateError("duplicate DSC for this seller-buyer pair")
        if any(c.dsc_address == address for c in self.contracts.values()):
            raise StateError("duplicate DSC address")
        cid = f"C{self.next_cid}"
        entry = ContractEntry(cid, seller, seller, buyer, self.keys.public_key(seller),
                              self.keys.public_key(buyer), address, abis)
        self.next_cid += 1
        self.contracts[cid] = entry
        self.pairs[(seller, buyer)] = cid
        return entry

    def _remove(self, tx: LedgerTx) -> str:
        cid = self._field(tx.payload, "cid", str)
        entry = self._contract(cid)
        self._verify(tx, [entry.seller, entry.buyer])
        live = [s.sid for s in self.subscriptions.values() if s.cid == cid]
        if live:
            raise StateError(f"DSC {cid} still has live subscriptions {sorted(live)}")
        del self.contracts[cid]
        del self.pairs[(entry.seller, entry.buyer)]
        self.removed.add(cid)
        return cid

    # -- data subscription contract ------------------------------------------

    def _add(self, tx: LedgerTx) -> Subscription:
        p = tx.payload
        cid = self._field(p, "cid", str)
        if cid in self.removed:
            raise NotFound(f"unknown DSC {cid!r} (removed)")
        entry = self._contract(cid)
        self._verify(tx, [entry.seller])
        if self._field(p, "buyer", str) != entry.buyer:
            raise TxInvalid("buyer does not match the DSC")
        num = (int, float)
        periodicity = float(self._field(p, "periodicity", num))
        duration = float(self._field(p, "duration", num))
        start_time = float(self._field(p, "start_time", num))
        qs = float(self._field(p, "quality_score", num))
        rs = float(self._field(p, "risk_score", num))
        unit_price = float(self._field(p, "unit_price", num))
        total_cost = float(self._field(p, "total_cost", num))
        data_type = self._field(p, "data_type", int)
        granularity = self._field(p, "payment_granularity", int)
        device = self._field(p, "device_hash", str)
        if not periodicity > 0 or not duration > 0:
            raise TxInvalid("periodicity and duration must be > 0")
        if not (0 <= qs <= 1 and 0 <= rs <= 1):
            raise TxInvalid("quality and risk scores must lie in [0, 1]")
        if not unit_price > 0 or total_cost < 0 or granularity < 1 or data_type < 0:
            raise TxInvalid("bad price, cost, granularity or data type")
        if device not in self.devices.get(entry.seller, ()):
            raise TxInvalid("device hash is not registered to the seller")
        record = PriceRecord(tx.time, data_type, unit_price, qs, rs)
        last = self.prices.for_type(data_type)
        if last and last[-1].timestamp > tx.time:
            raise TxInvalid("price record would predate the type's last record")

        sid = f"S{self.next_sid}"
        sub = Subscription(sid, cid, entry.seller, entry.buyer, device, data_type, start_time,
                           periodicity, duration, qs, rs, unit_price, total_cost, granularity,
                           Status.PENDING, str(p.get("negotiation_info", "")))
        self.next_sid += 1
        self.transitions.append((sid, None, Status.PENDING))
        self.subscriptions[sid] = sub
        self.prices.record_price(record)
        return sub

    def _start(self, tx: LedgerTx) -> str:
        sub = self._sub(self._field(tx.payload, "sid", str))
        self._verify(tx, [sub.seller])
        if sub.status != Status.PENDING:
            raise StateError(f"{sub.sid} is {sub.status.value}, not Pending")
        if tx.time < sub.start_time:
            raise StateError(f"{sub.sid} cannot start before {sub.start_time!r}")
        token = hashlib.sha256(f"session|{self.head}|{sub.sid}|{tx.time!r}".encode()).hexdigest()
        self.subscriptions[sub.sid] = self._set_status(sub, Status.ACTIVE, activated_at=tx.time)
        self.sessions[sub.sid] = token
        return token

    def _settle(self, tx: LedgerTx) -> Optional[SettlementOutcome]:
        p = tx.payload
        sub = self._sub(self._field(p, "sid", str))
        who = self._signer(tx, [sub.seller, sub.buyer])
        count = self._field(p, "count", int)
        feedback = float(self._field(p, "feedback", (int, float)))
        if count < 1:
            raise TxInvalid("data count must be a positive integer")
        if not 0.0 < feedback < 1.0:
            raise TxInvalid("feedback must lie strictly inside (0, 1)")
        if sub.status != Status.ACTIVE:
            raise StateError(f"{sub.sid} is {sub.status.value}, not Active")
        pending = self.settle_pending.get(sub.sid, {})
        if who in pending:
            raise StateError(f"{who} already submitted settlement for {sub.sid}")
        pending = {**pending, who: (count, feedback)}
        if len(pending) < 2:
            self.settle_pending[sub.sid] = pending
            return None
        self.settle_pending.pop(sub.sid, None)
        return self._resolve(sub, pending, tx.time)

    def _resolve(self, sub: Subscription, pending: Dict[str, Tuple[int, float]],
                 now: float) -> SettlementOutcome:
        s_count, s_feedback = pending[sub.seller]
        b_count, b_feedback = pending[sub.buyer]
        if s_count == b_count:
            resolution, count = Resolution.AGREED, s_count
        else:
            s_score = self.reputation.score(sub.seller)
            b_score = self.reputation.score(sub.buyer)
            if s_score > b_score:
                resolution, count = Resolution.FOR_SELLER, s_count
            elif b_score > s_score:
                resolution, count = Resolution.FOR_BUYER, b_count
            else:
                resolution, count = Resolution.ESCROWED, None

        if resolution == Resolution.ESCROWED:
            outcome = SettlementOutcome(sub.sid, s_count, b_count, resolution, None, False)
            self.subscriptions[sub.sid] = self._set_status(sub, Status.DISPUTED)
        else:
            invoice = count * sub.unit_price
            outcome = SettlementOutcome(sub.sid, s_count, b_count, resolution, invoice, True)
            self.subscriptions[sub.sid] = self._set_status(sub, Status.SETTLED)
            self.invoices.append({"sid": sub.sid, "buyer": sub.buyer, "count": count,
                                  "unit_price": sub.unit_price, "amount": invoice})
            self.payments.append({"sid": sub.sid, "from": sub.buyer, "to": sub.seller,
                                  "amount": invoice})
            # seller receives the buyer's feedback and vice versa
            self.reputation.rate(RatingEvent(sub.seller, sub.buyer, invoice,
                                             feedback_i=b_feedback, feedback_j=s_feedback,
                                             event_time=now))
        self.outcomes[sub.sid] = outcome
        return outcome

    def _expire(self, tx: LedgerTx) -> List[str]:
        if tx.signatures:
            raise AuthError("expiry is a ledger-internal transaction and carries no attestations")
        if digest(dict(tx.payload)) != tx.payload_hash:
            raise AuthError("payload hash does not match payload")
        sub = self._sub(self._field(tx.payload, "sid", str))
        if sub.status != Status.ACTIVE:
            raise StateError(f"{sub.sid} is {sub.status.value}, not Active")
        deadline = sub.service_end + self.genesis.settle_timeout
        if tx.time <= deadline:
            raise StateError(f"settlement window for {sub.sid} is open until {deadline!r}")
        pending = self.settle_pending.pop(sub.sid, {})
        absent = [a for a in (sub.seller, sub.buyer) if a not in pending]
        self.subscriptions[sub.sid] = self._set_status(sub, Status.DISPUTED)
        s_count = pending.get(sub.seller, (None,))[0]
        b_count = pending.get(sub.buyer, (None,))[0]
        self.outcomes[sub.sid] = SettlementOutcome(sub.sid, s_count, b_count,
                                                   Resolution.ESCROWED, None, False)
        for actor in absent:
            self.reputation.violation(actor, tx.time)
        return absent

    def _delete(self, tx: LedgerTx) -> str:
        sub = self._sub(self._field(tx.payload, "sid", str))
        self._verify(tx, [sub.seller])
        if sub.status not in (Status.SETTLED, Status.DISPUTED):
            raise StateError(f"{sub.sid} is {sub.status.value}; only settled or disputed "
                             "subscriptions can be deleted")
        self.history[sub.sid] = self._set_status(sub, Status.DELETED)
        del self.subscriptions[sub.sid]
        self.sessions.pop(sub.sid, None)
        return sub.sid

    # -- conveniences -------------------------------------------------------

    def subscription_settle(self, tx_seller: LedgerTx, tx_buyer: LedgerTx) -> SettlementOutcome:
        """Submit both settlement transactions; all-or-nothing."""
        trial = self.clone()
        trial.submit(tx_seller)
        outcome = trial.submit(tx_buyer)
        if outcome is None:
            raise StateError("settlement did not complete")
        self.__dict__.update(trial.__dict__)
        return outcome

    def lookup_history(self, sid: str) -> Subscription:
        if sid in self.history:
            return self.history[sid]
        raise NotFound(f"{sid!r} has no history entry")

    # -- log ----------------------------------------------------------------

    def log_lines(self) -> List[str]:
        header = {"genesis": self.genesis.to_dict(), "hash": digest(self.genesis.to_dict())}
        return [canonical(header).decode() + "\n"] + [canonical(e).decode() + "\n" for e in self.log]

    def write_log(self, path: Path | str) -> None:
        Path(path).write_text("".join(self.log_lines()))


class Meter:
    """Off-ledger sample counters kept by each party during an active subscription."""

    def __init__(self, ledger: Ledger):
        self.ledger = ledger
        self.counts: Dict[str, Dict[str, int]] = {}

    def report(self, sid: str, actor: str, count: int) -> None:
        sub = self.ledger.subscriptions.get(sid)
        if sub is None:
            raise NotFound(f"unknown subscription {sid!r}")
        if sub.status != Status.ACTIVE:
            raise StateError(f"{sid} is {sub.status.value}, not Active")
        if actor not in (sub.seller, sub.buyer):
            raise AuthError(f"{actor!r} is not a party to {sid}")
        if count < 0:
            raise TxInvalid("count must be >= 0")
        self.counts.setdefault(sid, {})[actor] = int(count)

    def count(self, sid: str, actor: str) -> Optional[int]:
        return self.counts.get(sid, {}).get(actor)


class ReplayError(LedgerError):
    category = "replay"


def replay(lines: Iterable[str]) -> Ledger:
    """Rebuild a ledger from log lines, checking the hash chain and every state digest."""
    it = iter(lines)
    try:
        header = json.loads(next(it))
    except StopIteration:
        raise ReplayError("empty log") from None
    genesis = Genesis.from_dict(header["genesis"])
    if header.get("hash") != digest(genesis.to_dict()):
        raise ReplayError("genesis hash mismatch")
    ledger = Ledger(genesis)
    for n, line in enumerate(it, 1):
        if not line.strip():
            continue
        entry = json.loads(line)
        if entry.get("seq") != n or entry.get("prev") != ledger.head:
            raise ReplayError(f"entry {n}: broken chain")
        body = {"seq": entry["seq"], "tx": entry["tx"], "state": entry["state"]}
        if _chain(entry["prev"], body) != entry.get("hash"):
            raise ReplayError(f"entry {n}: hash mismatch")
        try:
            ledger.submit(LedgerTx.from_dict(entry["tx"]))
        except LedgerError as exc:
            raise ReplayError(f"entry {n}: logged transaction rejected on replay: {exc}") from exc
        if ledger.log[-1]["state"] != entry["state"]:
            raise ReplayError(f"entry {n}: state digest diverged")
    return ledger


def read_log(path: Path | str) -> Ledger:
    with Path(path).open() as fh:
        return replay(fh)
