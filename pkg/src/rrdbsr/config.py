"""Run configuration: a TOML file with sections data, generator, discriminator, losses, schedule, logging.

Every key is optional except ``data.manifest`` for training. Unknown keys and
wrongly typed values raise ``ConfigurationError`` carrying the dotted field path.

Example::

    [data]
    manifest = "train.txt"      # one HR image path per line
    scale = 4

    [generator]
    block_type = "rrdb"         # or "residual_block"
    num_blocks = 23

    [losses]
    vgg_weights = "vgg19.pth"   # torchvision-layout VGG19 state dict
    lambda_adv = 5e-3
    eta_content = 1e-2

    [schedule.psnr]
    total_iters = 2000

    [schedule.gan]
    pretrained = "runs/psnr/generator.ckpt"
"""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .discriminator import DiscriminatorConfig
from .errors import ConfigurationError
from .features import FeatureTap, default_weights_path
from .generator import GeneratorConfig
from .losses import LossWeights
from .trainer import TrainSchedule, TrainerOptions, gan_schedule, psnr_schedule

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PRESETS = {"full": {"psnr": 300_000, "gan": 400_000}, "desk": {"psnr": 2_000, "gan": 2_000}}

_SCHEMA = {
    "preset": str,
    "data": {"manifest": str, "lr_dir": str, "scale": int},
    "generator": {"block_type": str, "num_blocks": int, "base_channels": int, "growth_channels": int,
                  "beta": float, "init_scale": float},
    "discriminator": {"base_channels": int, "dense_width": int, "norm": bool, "init_scale": float},
    "losses": {"lambda_adv": float, "eta_content": float, "vgg_weights": str, "tap": str,
               "pre_activation": bool, "feature_metric": str, "adversarial": str, "use_perceptual": bool},
    "schedule": {
        stage: {"lr0": float, "decay_points": list, "decay_period": int, "decay_factor": float,
                "beta1": float, "beta2": float, "batch": int, "hr_patch": int, "total_iters": int,
                "d_lr0": float, "d_steps_per_g": int, "pretrained": str}
        for stage in ("psnr", "gan")
    },
    "logging": {"log_every": int, "checkpoint_every": int},
}


def _check(node: dict, schema: dict, path: str) -> None:
    for key, value in node.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigurationError(f"unknown config key {here!r}", field=here)
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{here} must be a table", field=here)
            _check(value, expected, here)
            continue
        ok = isinstance(value, expected) and not (expected is int and isinstance(value, bool))
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            ok = True
        if not ok:
            raise ConfigurationError(f"{here} must be {expected.__name__}, got {type(value).__name__}",
                                     field=here)


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path
    generator: GeneratorConfig
    discriminator: dict
    weights: LossWeights
    tap: FeatureTap
    losses: dict
    schedules: dict
    logging: dict = field(default_factory=dict)

    @property
    def scale(self) -> int:
        return self.generator.scale

    def resolve(self, p: str | None) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def manifest(self) -> Path | None:
        return self.resolve(self.raw.get("data", {}).get("manifest"))

    @property
    def lr_dir(self) -> Path | None:
        return self.resolve(self.raw.get("data", {}).get("lr_dir"))

    @property
    def vgg_weights(self) -> Path:
        p = self.losses.get("vgg_weights")
        return self.resolve(p) if p else default_weights_path()

    def schedule(self, stage: str) -> TrainSchedule:
        return self.schedules[stage]

    def pretrained(self) -> Path | None:
        return self.resolve(self.raw.get("schedule", {}).get("gan", {}).get("pretrained"))

    def disc_config(self, stage: str = "gan") -> DiscriminatorConfig:
        return DiscriminatorConfig(patch_size=self.schedules[stage].hr_patch, **self.discriminator)

    def trainer_options(self, **overrides) -> TrainerOptions:
        l = self.losses
        opts = dict(
            weights=self.weights, tap=self.tap,
            feature_metric=l.get("feature_metric", "l1"),
            adversarial=l.get("adversarial", "ragan"),
            use_perceptual=l.get("use_perceptual", True),
            log_every=self.logging.get("log_every", 100),
            checkpoint_every=self.logging.get("checkpoint_every", 0),
        )
        opts.update(overrides)
        return TrainerOptions(**opts)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _build(section: str, factory, kwargs: dict):
    try:
        return factory(**kwargs)
    except (TypeError, ValueError) as e:
        msg = str(e)
        bad = next((k for k in kwargs if k in msg), None)
        raise ConfigurationError(msg, field=f"{section}.{bad}" if bad else section) from e


def parse_config(raw: dict, base_dir=".") -> RunConfig:
    _check(raw, _SCHEMA, "")
    preset = raw.get("preset", "full")
    if preset not in PRESETS:
        raise ConfigurationError(f"preset must be one of {sorted(PRESETS)}", field="preset")
    data = raw.get("data", {})
    gen = _build("generator", GeneratorConfig, {**raw.get("generator", {}), "scale": data.get("scale", 4)})
    losses = dict(raw.get("losses", {}))
    if losses.get("feature_metric", "l1") not in ("l1", "l2"):
        raise ConfigurationError("feature_metric must be l1 or l2", field="losses.feature_metric")
    if losses.get("adversarial", "ragan") not in ("ragan", "standard"):
        raise ConfigurationError("adversarial must be ragan or standard", field="losses.adversarial")
    weights = _build("losses", LossWeights, {k: losses[k] for k in ("lambda_adv", "eta_content") if k in losses})
    try:
        tap = FeatureTap(losses.get("tap", "conv5_4"), losses.get("pre_activation", True))
    except ValueError as e:
        raise ConfigurationError(str(e), field="losses.tap") from e

    schedules = {}
    for stage, factory in (("psnr", psnr_schedule), ("gan", gan_schedule)):
        s = dict(raw.get("schedule", {}).get(stage, {}))
        s.pop("pretrained", None)
        s.setdefault("total_iters", PRESETS[preset][stage])
        if "decay_points" in s:
            if not all(isinstance(p, int) for p in s["decay_points"]):
                raise ConfigurationError("decay_points must be integers", field=f"schedule.{stage}.decay_points")
            s["decay_points"] = tuple(s["decay_points"])
            s.setdefault("decay_period", None)
        sched = _build(f"schedule.{stage}", factory, s)
        if sched.hr_patch % gen.scale:
            raise ConfigurationError("hr_patch must be divisible by the scale", field=f"schedule.{stage}.hr_patch")
        schedules[stage] = sched

    disc = dict(raw.get("discriminator", {}))
    _build("discriminator", DiscriminatorConfig, {**disc, "patch_size": schedules["gan"].hr_patch})
    return RunConfig(raw, Path(base_dir), gen, disc, weights, tap, losses, schedules, dict(raw.get("logging", {})))


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}", field="<file>")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"cannot parse {path}: {e}", field="<file>") from e
    return parse_config(raw, path.parent)
