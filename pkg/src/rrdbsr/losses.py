"""Training objectives: relativistic average adversarial losses, L1 content, feature-space perceptual loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigurationError
from .features import FeatureTap, extract_features


@dataclass(frozen=True)
class LossWeights:
    lambda_adv: float = 5e-3
    eta_content: float = 1e-2

    def __post_init__(self):
        if self.lambda_adv < 0 or self.eta_content < 0:
            raise ValueError("loss weights must be nonnegative")


def _check_scores(c_real, c_fake):
    c_real, c_fake = torch.as_tensor(c_real), torch.as_tensor(c_fake)
    if c_real.numel() == 0 or c_fake.numel() == 0:
        raise ValueError("relativistic losses need non-empty real and fake batches")
    if not c_real.is_floating_point():
        c_real = c_real.double()
    if not c_fake.is_floating_point():
        c_fake = c_fake.double()
    return c_real.reshape(-1), c_fake.reshape(-1)


def relativistic_scores(c_real, c_fake):
    """``(D_Ra(x_r, x_f), D_Ra(x_f, x_r))`` per sample."""
    c_real, c_fake = _check_scores(c_real, c_fake)
    return torch.sigmoid(c_real - c_fake.mean()), torch.sigmoid(c_fake - c_real.mean())


def discriminator_loss_ra(c_real, c_fake) -> torch.Tensor:
    c_real, c_fake = _check_scores(c_real, c_fake)
    # -log(sigmoid(z)) == softplus(-z); -log(1 - sigmoid(z)) == softplus(z)
    real_rel = c_real - c_fake.mean()
    fake_rel = c_fake - c_real.mean()
    return F.softplus(-real_rel).mean() + F.softplus(fake_rel).mean()


def generator_adversarial_loss_ra(c_real, c_fake) -> torch.Tensor:
    """Symmetric counterpart of the critic loss; gradients reach both score batches."""
    c_real, c_fake = _check_scores(c_real, c_fake)
    real_rel = c_real - c_fake.mean()
    fake_rel = c_fake - c_real.mean()
    return F.softplus(real_rel).mean() + F.softplus(-fake_rel).mean()


def content_loss_l1(sr: torch.Tensor, hr: torch.Tensor) -> torch.Tensor:
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    return (sr - hr).abs().mean()


def perceptual_loss(extractor, sr, hr, tap: FeatureTap = FeatureTap(), metric: str = "l1") -> torch.Tensor:
    if extractor is None:
        raise ConfigurationError("perceptual loss needs VGG19 weights", field="losses.vgg_weights")
    if sr.shape != hr.shape:
        raise ValueError(f"shape mismatch: {tuple(sr.shape)} vs {tuple(hr.shape)}")
    f_sr = extract_features(extractor, sr, tap)
    if hr.requires_grad:
        f_hr = extract_features(extractor, hr, tap)
    else:
        with torch.no_grad():
            f_hr = extract_features(extractor, hr, tap)
    diff = f_sr - f_hr
    if metric == "l1":
        return diff.abs().mean()
    if metric == "l2":
        return (diff * diff).mean()
    raise ValueError(f"unknown feature metric {metric!r}")


def total_generator_loss(percep, adv, content, w: LossWeights):
    """``percep + lambda * adv + eta * content``; refuses non-finite components."""
    for name, v in (("perceptual", percep), ("adversarial", adv), ("content", content)):
        x = float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        if not math.isfinite(x):
            raise FloatingPointError(f"{name} loss is not finite ({x})")
    return percep + w.lambda_adv * adv + w.eta_content * content
