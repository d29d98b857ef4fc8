"""Canonical encoding, digests and keyed attestations.

Signatures are HMAC-SHA256 over a payload digest with a per-actor secret. The
"public key" carried in contract entries is a fingerprint of that secret; the
ledger verifies against the key ring it was started with. Swapping in real
asymmetric keys only touches ``KeyRing``.
"""

from __future__ import annotations

import hashlib
import hmac
import json
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping


def canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True,
                      allow_nan=False).encode("ascii")


def digest(obj) -> str:
    return hashlib.sha256(canonical(obj)).hexdigest()


def device_hash(identifier: str) -> str:
    """Digest under which a device (e.g. its MAC address) is registered."""
    return hashlib.sha256(identifier.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Attestation:
    actor: str
    signature: str

    def to_dict(self) -> dict:
        return {"actor": self.actor, "signature": self.signature}


class KeyRing:
    def __init__(self, secrets: Mapping[str, str]):
        self._secrets: Dict[str, bytes] = {a: bytes.fromhex(s) for a, s in secrets.items()}

    @classmethod
    def derived(cls, actors: Iterable[str], seed: str = "edsa") -> "KeyRing":
        """Deterministic secrets for simulations and tests."""
        return cls({a: hashlib.sha256(f"{seed}:{a}".encode()).hexdigest() for a in actors})

    def __contains__(self, actor: str) -> bool:
        return actor in self._secrets

    def secrets(self) -> Dict[str, str]:
        return {a: k.hex() for a, k in sorted(self._secrets.items())}

    def public_key(self, actor: str) -> str:
        return hashlib.sha256(b"pk:" + self._secrets[actor]).hexdigest()[:32]

    def sign(self, actor: str, payload_hash: str) -> Attestation:
        mac = hmac.new(self._secrets[actor], payload_hash.encode("ascii"), hashlib.sha256)
        return Attestation(actor, mac.hexdigest())

    def verify(self, att: Attestation, payload_hash: str) -> bool:
        key = self._secrets.get(att.actor)
        if key is None:
            return False
        mac = hmac.new(key, payload_hash.encode("ascii"), hashlib.sha256).hexdigest()
        return hmac.compare_digest(mac, att.signature)
