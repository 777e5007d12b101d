"""19-layer VGG feature taps (before or after the rectifier) and activation statistics."""
from __future__ import annotations

import hashlib
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError

# (stage, convs per stage, channels)
VGG19_STAGES = ((1, 2, 64), (2, 2, 128), (3, 4, 256), (4, 4, 512), (5, 4, 512))
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
WEIGHTS_ENV = "RRDBSR_WEIGHTS_DIR"
DEFAULT_WEIGHTS_NAME = "vgg19.pth"


def _layer_table():
    """Map ``conv{s}_{k}`` to its index inside the torchvision-style ``features`` sequence."""
    table, idx = {}, 0
    for stage, n, _ in VGG19_STAGES:
        for k in range(1, n + 1):
            table[f"conv{stage}_{k}"] = idx
            idx += 2
        idx += 1  # max-pool
    return table


CONV_INDEX = _layer_table()


@dataclass(frozen=True)
class FeatureTap:
    layer_id: str = "conv5_4"
    pre_activation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "layer_id", normalize_layer_id(self.layer_id))


def normalize_layer_id(layer_id) -> str:
    s = str(layer_id).strip().lower()
    m = re.fullmatch(r"(?:conv)?(\d)_?(\d)", s)
    if not m or f"conv{m.group(1)}_{m.group(2)}" not in CONV_INDEX:
        raise ValueError(f"unknown VGG19 layer {layer_id!r}")
    return f"conv{m.group(1)}_{m.group(2)}"


class FeatureExtractor(Protocol):
    def __call__(self, img: torch.Tensor, tap: FeatureTap) -> torch.Tensor: ...


def vgg19_features(width: float = 1.0) -> nn.Sequential:
    layers, cin = [], 3
    for _, n, c in VGG19_STAGES:
        c = max(1, int(round(c * width)))
        for _ in range(n):
            layers += [nn.Conv2d(cin, c, 3, 1, 1), nn.ReLU(inplace=False)]
            cin = c
        layers.append(nn.MaxPool2d(2, 2))
    return nn.Sequential(*layers)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def default_weights_path() -> Path:
    root = os.environ.get(WEIGHTS_ENV) or Path.home() / ".cache" / "rrdbsr"
    return Path(root) / DEFAULT_WEIGHTS_NAME


class VGG19Extractor(nn.Module):
    """Frozen VGG19 convolutional trunk.

    Inputs are RGB in [0, 1] and are normalized with the ImageNet channel
    statistics the classification weights were trained with.
    """

    def __init__(self, features: nn.Sequential, weights_sha256: str | None = None):
        super().__init__()
        self.features = features
        self.weights_sha256 = weights_sha256
        self.register_buffer("mean", torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(IMAGENET_STD).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @classmethod
    def from_file(cls, path) -> "VGG19Extractor":
        if path is None or not Path(path).is_file():
            raise ConfigurationError(f"VGG19 weight file not found: {path}", field="losses.vgg_weights")
        state = torch.load(path, map_location="cpu", weights_only=True)
        if isinstance(state, dict) and "state_dict" in state:
            state = state["state_dict"]
        feats = {k[len("features."):]: v for k, v in state.items() if k.startswith("features.")}
        if not feats:
            feats = {k: v for k, v in state.items() if re.fullmatch(r"\d+\.(weight|bias)", k)}
        if not feats:
            raise ConfigurationError(f"{path}: no VGG19 feature weights found", field="losses.vgg_weights")
        width = feats["0.weight"].shape[0] / 64.0
        features = vgg19_features(width)
        try:
            features.load_state_dict(feats)
        except RuntimeError as e:
            raise ConfigurationError(f"{path}: not a VGG19 feature state dict ({e})",
                                     field="losses.vgg_weights") from e
        return cls(features, file_sha256(path))

    @classmethod
    def random(cls, seed: int = 0, width: float = 1.0) -> "VGG19Extractor":
        """Untrained extractor for structural tests; not a substitute for real weights."""
        gen = torch.Generator().manual_seed(seed)
        features = vgg19_features(width)
        with torch.no_grad():
            for m in features:
                if isinstance(m, nn.Conv2d):
                    fan_in = m.weight[0].numel()
                    m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * (2.0 / fan_in) ** 0.5)
                    m.bias.copy_(torch.randn(m.bias.shape, generator=gen) * 0.01)
        return cls(features)

    def save(self, path) -> None:
        torch.save({f"features.{k}": v for k, v in self.features.state_dict().items()}, path)

    def taps(self, img: torch.Tensor, layers) -> dict:
        """Pre-activation outputs at every requested layer in one pass."""
        wanted = {normalize_layer_id(l) for l in layers}
        last = max(CONV_INDEX[l] for l in wanted)
        by_index = {CONV_INDEX[l]: l for l in wanted}
        h = (img.to(self.mean.dtype) - self.mean) / self.std
        out = {}
        for i, layer in enumerate(self.features):
            h = layer(h)
            if i in by_index:
                out[by_index[i]] = h
            if i >= last:
                break
        return out

    def forward(self, img: torch.Tensor, tap: FeatureTap) -> torch.Tensor:
        pre = self.taps(img, [tap.layer_id])[tap.layer_id]
        return pre if tap.pre_activation else F.relu(pre)


def extract_features(extractor: FeatureExtractor, img: torch.Tensor, tap: FeatureTap) -> torch.Tensor:
    if extractor is None:
        raise ConfigurationError("no feature extractor loaded", field="losses.vgg_weights")
    squeeze = img.ndim == 3
    out = extractor(img.unsqueeze(0) if squeeze else img, tap)
    return out[0] if squeeze else out


def activation_sparsity(features) -> float:
    """Fraction of entries strictly greater than zero."""
    t = torch.as_tensor(features)
    if t.numel() == 0:
        raise ValueError("empty feature map")
    return float((t > 0).sum()) / t.numel()
