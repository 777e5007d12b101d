"""Named parameter sets and the on-disk checkpoint container shared by all networks."""
from __future__ import annotations

import hashlib
import io
import os
import tempfile
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path
from typing import Any

import torch

FORMAT_VERSION = 1


@dataclass
class ParameterSet:
    """Ordered ``name -> tensor`` map plus the config that produced it.

    ``stage`` is one of ``init``, ``psnr``, ``gan``, ``disc`` or ``interp(<alpha>)``.
    """

    tensors: "OrderedDict[str, torch.Tensor]"
    config: Any
    stage: str = "init"
    iteration: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_module(cls, module: torch.nn.Module, config, stage: str = "init", iteration: int = 0):
        tensors = OrderedDict((k, v.detach().clone()) for k, v in module.state_dict().items())
        return cls(tensors, config, stage, iteration)

    @property
    def kind(self) -> str:
        return getattr(self.config, "kind", "generator")

    def names(self) -> list[str]:
        return list(self.tensors)

    def shapes(self) -> "OrderedDict[str, tuple]":
        return OrderedDict((k, tuple(v.shape)) for k, v in self.tensors.items())

    def num_parameters(self) -> int:
        return sum(v.numel() for v in self.tensors.values())

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.tensors.items():
            h.update(k.encode())
            h.update(v.detach().cpu().contiguous().numpy().tobytes())
        return h.hexdigest()

    def check_compatible(self, other: "ParameterSet | OrderedDict") -> None:
        """Raise ``ValueError`` naming the first entry whose name or shape differs."""
        mine = self.shapes()
        theirs = other.shapes() if isinstance(other, ParameterSet) else OrderedDict(
            (k, tuple(v.shape)) for k, v in other.items())
        for (a, sa), (b, sb) in zip(mine.items(), theirs.items()):
            if a != b:
                raise ValueError(f"parameter name mismatch: {a!r} vs {b!r}")
            if sa != sb:
                raise ValueError(f"parameter shape mismatch for {a!r}: {sa} vs {sb}")
        if len(mine) != len(theirs):
            longer, shorter = (mine, theirs) if len(mine) > len(theirs) else (theirs, mine)
            missing = next(k for k in longer if k not in shorter)
            raise ValueError(f"parameter name mismatch: {missing!r} present on one side only")

    def load_into(self, module: torch.nn.Module) -> torch.nn.Module:
        ParameterSet(OrderedDict(module.state_dict()), self.config).check_compatible(self)
        module.load_state_dict(self.tensors)
        return module


def atomic_save(obj, path) -> None:
    """Write-temp-then-rename. Serialized in memory first so the bytes do not depend on the temp name."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save(obj, buf)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(buf.getbuffer())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _config_dict(config) -> dict:
    if is_dataclass(config):
        return {"kind": getattr(config, "kind", "generator"), **asdict(config)}
    return dict(config)


def save_checkpoint(path, params: ParameterSet) -> None:
    atomic_save({
        "format_version": FORMAT_VERSION,
        "kind": params.kind,
        "config": _config_dict(params.config),
        "stage": params.stage,
        "iteration": params.iteration,
        "names": params.names(),
        "tensors": OrderedDict((k, v.detach().cpu()) for k, v in params.tensors.items()),
    }, path)


def load_checkpoint(path, expect_kind: str | None = None) -> ParameterSet:
    """Load and validate a checkpoint against the network its config describes."""
    from .discriminator import DiscriminatorConfig, build_discriminator_module
    from .generator import GeneratorConfig, build_generator_module

    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format {blob.get('format_version')!r}")
    kind = blob["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise ValueError(f"{path}: expected a {expect_kind} checkpoint, found {kind}")
    cfg = dict(blob["config"])
    cfg.pop("kind", None)
    if kind == "generator":
        config = GeneratorConfig(**cfg)
        reference = build_generator_module(config)
    elif kind == "discriminator":
        config = DiscriminatorConfig(**cfg)
        reference = build_discriminator_module(config)
    else:
        raise ValueError(f"{path}: unknown checkpoint kind {kind!r}")
    tensors = OrderedDict((k, blob["tensors"][k]) for k in blob["names"])
    params = ParameterSet(tensors, config, blob["stage"], int(blob["iteration"]))
    ParameterSet.from_module(reference, config).check_compatible(params)
    return params
