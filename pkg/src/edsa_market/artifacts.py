"""Output files: atomic writes and the run manifest written next to each output."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__


def atomic_write(path: Path | str, text: str) -> Path:
    """Write via a temp file in the same directory and rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def file_digest(path: Path | str) -> str:
    return sha256_bytes(Path(path).read_bytes())


@dataclass
class RunManifest:
    command: List[str]
    config_digest: Optional[str]
    seed: Optional[int]
    version: str = __version__
    outputs: Dict[str, str] = field(default_factory=dict)
    duration_s: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


class ManifestWriter:
    """Collects outputs of one command and writes ``<output>.manifest.json`` for each."""

    def __init__(self, argv: Sequence[str], config_bytes: Optional[bytes], seed: Optional[int],
                 started: Optional[float] = None):
        self.started = time.monotonic() if started is None else started
        self.manifest = RunManifest(list(argv),
                                    sha256_bytes(config_bytes) if config_bytes is not None else None,
                                    seed)
        self.paths: List[Path] = []

    def write(self, path: Path | str, text: str) -> Path:
        p = atomic_write(path, text)
        self.manifest.outputs[str(p)] = file_digest(p)
        self.paths.append(p)
        return p

    def close(self) -> None:
        self.manifest.duration_s = round(time.monotonic() - self.started, 6)
        for p in self.paths:
            atomic_write(p.with_name(p.name + ".manifest.json"), self.manifest.to_json())
