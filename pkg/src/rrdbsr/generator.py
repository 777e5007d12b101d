"""BN-free super-resolution generator built from residual or residual-in-residual dense blocks."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call

from .params import ParameterSet

BLOCK_TYPES = ("residual_block", "rrdb")
NORM_TAGS = ("bn", "norm", "running_mean", "running_var")


@dataclass(frozen=True)
class GeneratorConfig:
    block_type: str = "rrdb"
    num_blocks: int = 23
    base_channels: int = 64
    growth_channels: int = 32
    beta: float = 0.2
    scale: int = 4
    init_scale: float = 0.1
    in_channels: int = 3
    out_channels: int = 3

    kind = "generator"

    def __post_init__(self):
        if self.block_type not in BLOCK_TYPES:
            raise ValueError(f"block_type must be one of {BLOCK_TYPES}, got {self.block_type!r}")
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.scale < 2 or self.scale & (self.scale - 1):
            raise ValueError(f"scale must be a power of two >= 2, got {self.scale}")
        if self.base_channels < 1 or self.growth_channels < 1:
            raise ValueError("channel counts must be positive")
        if not self.init_scale > 0:
            raise ValueError("init_scale must be positive")


def conv3x3(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, 3, 1, 1)


class DenseBlock(nn.Module):
    def __init__(self, nf: int = 64, gc: int = 32, beta: float = 0.2):
        super().__init__()
        self.beta = beta
        self.conv1 = conv3x3(nf, gc)
        self.conv2 = conv3x3(nf + gc, gc)
        self.conv3 = conv3x3(nf + 2 * gc, gc)
        self.conv4 = conv3x3(nf + 3 * gc, gc)
        self.conv5 = conv3x3(nf + 4 * gc, nf)

    def forward(self, x):
        if x.shape[1] != self.conv1.in_channels:
            raise ValueError(f"dense block expects {self.conv1.in_channels} channels, got {x.shape[1]}")
        x1 = F.leaky_relu(self.conv1(x), 0.2)
        x2 = F.leaky_relu(self.conv2(torch.cat((x, x1), 1)), 0.2)
        x3 = F.leaky_relu(self.conv3(torch.cat((x, x1, x2), 1)), 0.2)
        x4 = F.leaky_relu(self.conv4(torch.cat((x, x1, x2, x3), 1)), 0.2)
        x5 = self.conv5(torch.cat((x, x1, x2, x3, x4), 1))
        return x + self.beta * x5


class RRDB(nn.Module):
    # The outer branch is scaled against the block input so that zeroed
    # weights leave the block an exact identity.
    def __init__(self, nf: int = 64, gc: int = 32, beta: float = 0.2):
        super().__init__()
        self.beta = beta
        self.rdb1 = DenseBlock(nf, gc, beta)
        self.rdb2 = DenseBlock(nf, gc, beta)
        self.rdb3 = DenseBlock(nf, gc, beta)

    def forward(self, x):
        inner = self.rdb3(self.rdb2(self.rdb1(x)))
        return x + self.beta * (inner - x)


class ResidualBlock(nn.Module):
    """conv-ReLU-conv residual block without batch normalization."""

    def __init__(self, nf: int = 64, beta: float = 0.2):
        super().__init__()
        self.beta = beta
        self.conv1 = conv3x3(nf, nf)
        self.conv2 = conv3x3(nf, nf)

    def forward(self, x):
        if x.shape[1] != self.conv1.in_channels:
            raise ValueError(f"residual block expects {self.conv1.in_channels} channels, got {x.shape[1]}")
        return x + self.beta * self.conv2(F.relu(self.conv1(x)))


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        nf, gc, beta = config.base_channels, config.growth_channels, config.beta
        self.conv_first = conv3x3(config.in_channels, nf)
        if config.block_type == "rrdb":
            blocks = [RRDB(nf, gc, beta) for _ in range(config.num_blocks)]
        else:
            blocks = [ResidualBlock(nf, beta) for _ in range(config.num_blocks)]
        self.body = nn.Sequential(*blocks)
        self.conv_body = conv3x3(nf, nf)
        self.n_up = int(math.log2(config.scale))
        for k in range(1, self.n_up + 1):
            self.add_module(f"conv_up{k}", conv3x3(nf, nf))
        self.conv_hr = conv3x3(nf, nf)
        self.conv_last = conv3x3(nf, config.out_channels)

    def forward(self, x):
        if x.shape[-3] != self.config.in_channels:
            raise ValueError(f"generator expects {self.config.in_channels} input channels, got {x.shape[-3]}")
        if x.shape[-2] < 16 or x.shape[-1] < 16:
            raise ValueError(f"LR input must be at least 16x16, got {tuple(x.shape[-2:])}")
        fea = self.conv_first(x)
        fea = fea + self.conv_body(self.body(fea))
        for k in range(1, self.n_up + 1):
            fea = F.interpolate(fea, scale_factor=2, mode="nearest")
            fea = F.leaky_relu(getattr(self, f"conv_up{k}")(fea), 0.2)
        return self.conv_last(F.leaky_relu(self.conv_hr(fea), 0.2))


def init_msra_scaled(shape, fan_in: int, init_scale: float, rng_seed) -> torch.Tensor:
    """Kaiming-normal draw (fan-in mode) scaled by ``init_scale``.

    ``rng_seed`` is an int or a ``torch.Generator``.
    """
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    if not init_scale > 0:
        raise ValueError(f"init_scale must be positive, got {init_scale}")
    if isinstance(rng_seed, torch.Generator):
        gen = rng_seed
    else:
        gen = torch.Generator().manual_seed(int(rng_seed))
    std = init_scale * math.sqrt(2.0 / fan_in)
    return torch.randn(tuple(shape), generator=gen, dtype=torch.float32) * std


def initialize_convs(module: nn.Module, init_scale: float, seed: int) -> None:
    convs = [m for m in module.modules() if isinstance(m, nn.Conv2d)]
    state = np.random.SeedSequence(int(seed)).spawn(len(convs))
    with torch.no_grad():
        for conv, ss in zip(convs, state):
            fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
            w = init_msra_scaled(conv.weight.shape, fan_in, init_scale, int(ss.generate_state(1)[0]))
            conv.weight.copy_(w)
            conv.bias.zero_()


def build_generator_module(config: GeneratorConfig, seed: int | None = None) -> Generator:
    model = Generator(config)
    if seed is not None:
        initialize_convs(model, config.init_scale, seed)
    return model


def build_generator(config: GeneratorConfig, rng_seed: int) -> ParameterSet:
    return ParameterSet.from_module(build_generator_module(config, rng_seed), config, "init")


def has_normalization(names) -> bool:
    return any(tag in part for name in names for part in name.split(".") for tag in NORM_TAGS)


def _module_for(params: ParameterSet) -> Generator:
    model = Generator(params.config)
    ParameterSet.from_module(model, params.config).check_compatible(params)
    return model


def generator_forward(params: ParameterSet, lr: torch.Tensor, clamp: bool = False) -> torch.Tensor:
    """Run the generator with ``params``; output is raw unless ``clamp`` is set."""
    model = _module_for(params)
    out = functional_call(model, dict(params.tensors), (lr,))
    return out.clamp(0.0, 1.0) if clamp else out


def dense_block_forward(params, x, beta: float = 0.2) -> torch.Tensor:
    """Functional dense block; ``params`` maps ``conv{k}.weight``/``conv{k}.bias``."""
    w1 = params["conv1.weight"]
    block = DenseBlock(w1.shape[1], w1.shape[0], beta)
    return functional_call(block, dict(params), (x,))


def rrdb_forward(params, x, beta: float = 0.2) -> torch.Tensor:
    """Functional RRDB; ``params`` maps ``rdb{i}.conv{k}.weight``/``.bias``."""
    w1 = params["rdb1.conv1.weight"]
    block = RRDB(w1.shape[1], w1.shape[0], beta)
    return functional_call(block, dict(params), (x,))


def sub_params(params, prefix: str) -> "OrderedDict[str, torch.Tensor]":
    tensors = params.tensors if isinstance(params, ParameterSet) else params
    return OrderedDict((k[len(prefix):], v) for k, v in tensors.items() if k.startswith(prefix))


@torch.no_grad()
def super_resolve(params: ParameterSet, lr: torch.Tensor) -> torch.Tensor:
    """Inference entry point: adds a batch axis if needed and clamps to [0, 1]."""
    squeeze = lr.ndim == 3
    if squeeze:
        lr = lr.unsqueeze(0)
    out = generator_forward(params, lr.float(), clamp=True)
    return out[0] if squeeze else out
