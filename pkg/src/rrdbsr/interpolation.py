"""Perception/distortion controls: parameter blending, pixel blending and back-projection."""
from __future__ import annotations

from collections import OrderedDict
from fractions import Fraction

import numpy as np
import torch

from .data import ResampleSpec, bicubic_resize
from .params import ParameterSet

SWEEP = tuple(round(0.2 * k, 1) for k in range(6))


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def interpolate_parameters(psnr: ParameterSet, gan: ParameterSet, alpha: float) -> ParameterSet:
    """Entrywise ``(1 - alpha) * psnr + alpha * gan``; the endpoints are copied exactly."""
    alpha = _check_alpha(alpha)
    if psnr.config != gan.config:
        raise ValueError(f"generator configs differ: {psnr.config} vs {gan.config}")
    psnr.check_compatible(gan)
    out = OrderedDict()
    for name, a in psnr.tensors.items():
        b = gan.tensors[name]
        if alpha == 0.0:
            out[name] = a.clone()
        elif alpha == 1.0:
            out[name] = b.clone()
        else:
            out[name] = (1.0 - alpha) * a + alpha * b
    return ParameterSet(out, psnr.config, f"interp({alpha:g})", 0)


def interpolate_images(a, b, alpha: float):
    alpha = _check_alpha(alpha)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if alpha == 0.0:
        out = a
    elif alpha == 1.0:
        out = b
    else:
        out = (1.0 - alpha) * a + alpha * b
    if isinstance(out, torch.Tensor):
        return out.clamp(0.0, 1.0)
    return np.clip(out, 0.0, 1.0)


def back_project(sr, lr, iters: int = 5):
    """Iterate ``sr <- sr + up(lr - down(sr))`` with the bicubic operators, then clamp."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    H, W = sr.shape[-2:]
    h, w = lr.shape[-2:]
    if H % h or W % w or H // h != W // w:
        raise ValueError(f"SR {H}x{W} is not an integer multiple of LR {h}x{w}")
    scale = H // h
    down = ResampleSpec(Fraction(1, scale))
    up = ResampleSpec(scale)
    out = sr
    for _ in range(iters):
        residual = lr - bicubic_resize(out, down, size=(h, w))
        out = out + bicubic_resize(residual, up, size=(H, W))
    if isinstance(out, torch.Tensor):
        return out.clamp(0.0, 1.0)
    return np.clip(out, 0.0, 1.0)
