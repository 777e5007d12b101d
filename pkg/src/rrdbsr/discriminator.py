"""VGG-style critic returning the raw (pre-sigmoid) score per image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.func import functional_call

from .generator import init_msra_scaled
from .params import ParameterSet


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 64
    patch_size: int = 128
    dense_width: int = 100
    norm: bool = True
    in_channels: int = 3
    init_scale: float = 1.0

    kind = "discriminator"

    def __post_init__(self):
        if self.patch_size % 32:
            raise ValueError(f"critic patch_size must be a multiple of 32, got {self.patch_size}")
        if self.base_channels < 1 or self.dense_width < 1:
            raise ValueError("channel counts must be positive")


class Critic(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        nf = config.base_channels
        chans = [nf, 2 * nf, 4 * nf, 8 * nf, 8 * nf]
        self.conv0_0 = nn.Conv2d(config.in_channels, nf, 3, 1, 1)
        self.stages = nn.ModuleList()
        cin = nf
        for i, c in enumerate(chans):
            layers = nn.Sequential()
            if i > 0:
                layers.add_module("conv_a", nn.Conv2d(cin, c, 3, 1, 1, bias=not config.norm))
                if config.norm:
                    layers.add_module("bn_a", nn.BatchNorm2d(c))
                layers.add_module("act_a", nn.LeakyReLU(0.2))
            layers.add_module("conv_b", nn.Conv2d(c, c, 4, 2, 1, bias=not config.norm))
            if config.norm:
                layers.add_module("bn_b", nn.BatchNorm2d(c))
            layers.add_module("act_b", nn.LeakyReLU(0.2))
            self.stages.append(layers)
            cin = c
        side = config.patch_size // 32
        self.linear1 = nn.Linear(8 * nf * side * side, config.dense_width)
        self.linear2 = nn.Linear(config.dense_width, 1)

    def forward(self, x):
        p = self.config.patch_size
        if x.shape[-2:] != (p, p):
            raise ValueError(f"critic expects {p}x{p} inputs, got {tuple(x.shape[-2:])}")
        h = F.leaky_relu(self.conv0_0(x), 0.2)
        for stage in self.stages:
            h = stage(h)
        h = F.leaky_relu(self.linear1(h.flatten(1)), 0.2)
        return self.linear2(h).squeeze(1)


def build_discriminator_module(config: DiscriminatorConfig, seed: int | None = None) -> Critic:
    model = Critic(config)
    if seed is not None:
        layers = [m for m in model.modules() if isinstance(m, (nn.Conv2d, nn.Linear))]
        seeds = np.random.SeedSequence(int(seed)).spawn(len(layers))
        with torch.no_grad():
            for m, ss in zip(layers, seeds):
                fan_in = m.weight[0].numel()
                m.weight.copy_(init_msra_scaled(m.weight.shape, fan_in, config.init_scale,
                                                int(ss.generate_state(1)[0])))
                if m.bias is not None:
                    m.bias.zero_()
    return model


def build_discriminator(config: DiscriminatorConfig, rng_seed: int) -> ParameterSet:
    return ParameterSet.from_module(build_discriminator_module(config, rng_seed), config, "disc")


def critic_forward(params: ParameterSet, img: torch.Tensor, train: bool = True) -> torch.Tensor:
    """Scores ``C(x)``, shape ``[batch]``. No sigmoid is applied.

    With ``train`` set, normalization layers use batch statistics and the
    running-statistics buffers in ``params`` are updated in place.
    """
    model = Critic(params.config)
    ParameterSet.from_module(model, params.config).check_compatible(params)
    model.train(train)
    return functional_call(model, dict(params.tensors), (img,))
