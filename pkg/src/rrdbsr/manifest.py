"""Reproducibility metadata written once into every artifact directory."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    seed: int | None = None
    config_hash: str | None = None
    dataset_manifest_hash: str | None = None
    external_weights: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    code_version: str = __version__
    started: str = field(default_factory=_now)
    finished: str | None = None

    def write(self, out_dir) -> Path:
        self.finished = _now()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / MANIFEST_NAME
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path
