"""Two-stage optimisation: L1 pretraining, then relativistic GAN fine-tuning."""
from __future__ import annotations

import json
import logging
import math
import queue
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import torch
import torch.nn.functional as F

from .data import PairedDataset
from .discriminator import Critic, DiscriminatorConfig, build_discriminator_module
from .errors import ConfigurationError, TrainingDiverged
from .features import FeatureTap
from .generator import Generator, GeneratorConfig, build_generator_module
from .losses import (LossWeights, content_loss_l1, discriminator_loss_ra, generator_adversarial_loss_ra,
                     perceptual_loss, relativistic_scores)
from .params import ParameterSet, atomic_save, save_checkpoint

log = logging.getLogger(__name__)

STATE_VERSION = 1


@dataclass(frozen=True)
class TrainSchedule:
    stage: str = "psnr"
    lr0: float = 2e-4
    decay_points: tuple = ()
    decay_period: int | None = 200_000
    decay_factor: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    batch: int = 16
    hr_patch: int = 192
    total_iters: int = 300_000
    d_lr0: float | None = None
    d_steps_per_g: int = 1

    def __post_init__(self):
        if self.stage not in ("psnr", "gan"):
            raise ValueError(f"stage must be psnr or gan, got {self.stage!r}")
        object.__setattr__(self, "decay_points", tuple(int(p) for p in self.decay_points))
        pts = self.decay_points
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValueError(f"decay points must be strictly increasing: {pts}")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 < self.decay_factor <= 1:
            raise ValueError("decay_factor must lie in (0, 1]")
        if self.decay_period is not None and self.decay_period < 1:
            raise ValueError("decay_period must be >= 1")
        if self.d_lr0 is not None and self.d_lr0 < 0:
            raise ValueError("d_lr0 must be >= 0")
        if self.batch < 1 or self.total_iters < 0 or self.d_steps_per_g < 1:
            raise ValueError("batch, total_iters and d_steps_per_g must be positive")


def psnr_schedule(**overrides) -> TrainSchedule:
    return replace(TrainSchedule(stage="psnr", lr0=2e-4, decay_period=200_000, hr_patch=192,
                                 total_iters=300_000), **overrides)


def gan_schedule(**overrides) -> TrainSchedule:
    return replace(TrainSchedule(stage="gan", lr0=1e-4, decay_points=(50_000, 100_000, 200_000, 300_000),
                                 decay_period=None, hr_patch=128, total_iters=400_000), **overrides)


def lr_schedule(step: int, sched: TrainSchedule, lr0: float | None = None) -> float:
    """Step-decayed learning rate: periodic when ``decay_period`` is set, else milestone-based."""
    if step < 0:
        raise ValueError("step must be >= 0")
    base = sched.lr0 if lr0 is None else lr0
    if sched.decay_period:
        n = step // sched.decay_period
    else:
        n = sum(1 for p in sched.decay_points if p <= step)
    return base * sched.decay_factor ** n


def discriminator_loss_standard(c_real, c_fake):
    return (F.binary_cross_entropy_with_logits(c_real, torch.ones_like(c_real))
            + F.binary_cross_entropy_with_logits(c_fake, torch.zeros_like(c_fake)))


def generator_adversarial_loss_standard(c_real, c_fake):
    return F.binary_cross_entropy_with_logits(c_fake, torch.ones_like(c_fake))


class Prefetcher:
    """Background producer of ready batches through a bounded queue."""

    def __init__(self, fn, start: int, stop: int, depth: int = 4):
        self.q = queue.Queue(maxsize=depth)
        self.fn = fn
        self._stop = threading.Event()
        self.thread = threading.Thread(target=self._run, args=(start, stop), daemon=True)
        self.thread.start()

    def _run(self, start, stop):
        for it in range(start, stop):
            if self._stop.is_set():
                return
            self.q.put((it, self.fn(it)))

    def get(self, it):
        got, batch = self.q.get()
        assert got == it, (got, it)
        return batch

    def close(self):
        self._stop.set()
        while not self.q.empty():
            self.q.get_nowait()


@dataclass
class TrainerOptions:
    weights: LossWeights = field(default_factory=LossWeights)
    tap: FeatureTap = field(default_factory=FeatureTap)
    feature_metric: str = "l1"
    adversarial: str = "ragan"
    use_perceptual: bool = True
    log_every: int = 100
    log_path: str | None = None
    checkpoint_dir: str | None = None
    checkpoint_every: int = 0
    history: int = 1000
    deterministic: bool = True
    prefetch: int = 0


class Trainer:
    """Owns the mutable training state for one stage.

    For the GAN stage pass a ``pretrained`` generator tagged ``psnr`` and a
    feature ``extractor``; both are checked before any step runs.
    """

    def __init__(self, gen_config: GeneratorConfig, sched: TrainSchedule, dataset: PairedDataset, seed: int,
                 pretrained: ParameterSet | None = None, disc_config: DiscriminatorConfig | None = None,
                 extractor=None, options: TrainerOptions | None = None):
        self.opts = options or TrainerOptions()
        self.gen_config = gen_config
        self.sched = sched
        self.dataset = dataset
        self.seed = int(seed)
        self.extractor = extractor
        if self.opts.deterministic:
            torch.use_deterministic_algorithms(True)
        if dataset.scale != gen_config.scale:
            raise ConfigurationError(f"dataset scale {dataset.scale} != generator scale {gen_config.scale}",
                                     field="generator.scale")

        self.G: Generator = build_generator_module(gen_config, self.seed)
        if pretrained is not None:
            if pretrained.config != gen_config:
                raise ValueError("pretrained generator config does not match")
            pretrained.load_into(self.G)
        self.g_opt = torch.optim.Adam(self.G.parameters(), lr=sched.lr0, betas=(sched.beta1, sched.beta2))

        self.D: Critic | None = None
        self.d_opt = None
        if sched.stage == "gan":
            if pretrained is None or pretrained.stage != "psnr":
                raise ValueError("GAN stage must start from a generator tagged 'psnr'")
            if self.opts.use_perceptual and extractor is None:
                raise ConfigurationError("GAN stage needs VGG19 weights for the perceptual loss",
                                         field="losses.vgg_weights")
            if self.opts.adversarial not in ("ragan", "standard"):
                raise ConfigurationError(f"unknown adversarial loss {self.opts.adversarial!r}",
                                         field="losses.adversarial")
            disc_config = disc_config or DiscriminatorConfig(patch_size=sched.hr_patch)
            if disc_config.patch_size != sched.hr_patch:
                raise ConfigurationError("critic patch size must equal the HR training patch",
                                         field="discriminator.patch_size")
            self.disc_config = disc_config
            self.D = build_discriminator_module(disc_config, self.seed + 1)
            self.D.train()
            self.d_opt = torch.optim.Adam(self.D.parameters(), lr=self.d_lr(0),
                                          betas=(sched.beta1, sched.beta2))
        self.iteration = 0
        self.history = deque(maxlen=self.opts.history)
        self._t0 = time.time()
        self._last_good: ParameterSet | None = None

    # -- schedule ----------------------------------------------------------
    def g_lr(self, it: int) -> float:
        return lr_schedule(it, self.sched)

    def d_lr(self, it: int) -> float:
        base = self.sched.lr0 if self.sched.d_lr0 is None else self.sched.d_lr0
        return lr_schedule(it, self.sched, base)

    def batch(self, it: int):
        s = self.sched
        return self.dataset.sample(self.seed, it, s.batch, s.hr_patch)

    # -- steps -------------------------------------------------------------
    def psnr_step(self, lr, hr) -> dict:
        for g in self.g_opt.param_groups:
            g["lr"] = self.g_lr(self.iteration)
        sr = self.G(lr)
        loss = content_loss_l1(sr, hr)
        self._guard({"l1": loss})
        self.g_opt.zero_grad(set_to_none=True)
        loss.backward()
        self.g_opt.step()
        return {"l1": float(loss.detach())}

    def d_step(self, lr, hr) -> dict:
        for g in self.d_opt.param_groups:
            g["lr"] = self.d_lr(self.iteration)
        for p in self.D.parameters():
            p.requires_grad_(True)
        with torch.no_grad():
            fake = self.G(lr)
        c_real = self.D(hr)
        c_fake = self.D(fake)
        if self.opts.adversarial == "ragan":
            l_d = discriminator_loss_ra(c_real, c_fake)
        else:
            l_d = discriminator_loss_standard(c_real, c_fake)
        self._guard({"d": l_d})
        self.d_opt.zero_grad(set_to_none=True)
        l_d.backward()
        self.d_opt.step()
        d_real, d_fake = relativistic_scores(c_real.detach(), c_fake.detach())
        return {"d": float(l_d.detach()), "d_real": float(d_real.mean()), "d_fake": float(d_fake.mean())}

    def g_step(self, lr, hr) -> dict:
        for g in self.g_opt.param_groups:
            g["lr"] = self.g_lr(self.iteration)
        for p in self.D.parameters():
            p.requires_grad_(False)
        fake = self.G(lr)
        with torch.no_grad():
            c_real = self.D(hr)
        c_fake = self.D(fake)
        if self.opts.adversarial == "ragan":
            adv = generator_adversarial_loss_ra(c_real, c_fake)
        else:
            adv = generator_adversarial_loss_standard(c_real, c_fake)
        l1 = content_loss_l1(fake, hr)
        if self.opts.use_perceptual:
            percep = perceptual_loss(self.extractor, fake, hr, self.opts.tap, self.opts.feature_metric)
        else:
            percep = torch.zeros((), dtype=l1.dtype)
        parts = {"percep": percep, "adv": adv, "l1": l1}
        self._guard(parts)
        w = self.opts.weights
        total = percep + w.lambda_adv * adv + w.eta_content * l1
        self.g_opt.zero_grad(set_to_none=True)
        total.backward()
        self.g_opt.step()
        for p in self.D.parameters():
            p.requires_grad_(True)
        return {"g_total": float(total.detach()), **{f"g_{k}": float(v.detach()) for k, v in parts.items()}}

    def step(self) -> dict:
        lr, hr = self._next_batch(self.iteration)
        if self.sched.stage == "psnr":
            out = self.psnr_step(lr, hr)
        else:
            out = {}
            for _ in range(self.sched.d_steps_per_g):
                out.update(self.d_step(lr, hr))
            out.update(self.g_step(lr, hr))
        out["lr"] = self.g_lr(self.iteration)
        out["iter"] = self.iteration
        self.iteration += 1
        self.history.append(out)
        return out

    def _next_batch(self, it):
        if self._prefetch is not None:
            return self._prefetch.get(it)
        return self.batch(it)

    _prefetch = None

    def _guard(self, parts: dict) -> None:
        for name, v in parts.items():
            if not math.isfinite(float(v.detach())):
                ckpt = self._save_last_good()
                raise TrainingDiverged(f"{name} loss became {float(v.detach())} at iteration {self.iteration}",
                                       self.iteration, ckpt)

    def _save_last_good(self) -> str | None:
        if self.opts.checkpoint_dir is None:
            return None
        path = Path(self.opts.checkpoint_dir) / "last_good_state.pt"
        self.save_state(path)
        return str(path)

    # -- driving -----------------------------------------------------------
    def run(self, until: int | None = None) -> "Trainer":
        """Train up to iteration ``until`` (default: the schedule's total)."""
        stop = self.sched.total_iters if until is None else until
        if self.opts.prefetch and not self.opts.deterministic and self.iteration < stop:
            self._prefetch = Prefetcher(self.batch, self.iteration, stop, self.opts.prefetch)
        logf = open(self.opts.log_path, "a") if self.opts.log_path else None
        try:
            while self.iteration < stop:
                out = self.step()
                it = self.iteration
                if self.opts.log_every and (it % self.opts.log_every == 0 or it == stop):
                    self._log(out, logf)
                if self.opts.checkpoint_every and it % self.opts.checkpoint_every == 0:
                    self.checkpoint()
        except KeyboardInterrupt:
            if self.opts.checkpoint_dir:
                self.checkpoint()
            raise
        finally:
            if self._prefetch is not None:
                self._prefetch.close()
                self._prefetch = None
            if logf:
                logf.close()
        return self

    def _log(self, out: dict, logf) -> None:
        rec = {"stage": self.sched.stage, **out, "iter": self.iteration, "wall": round(time.time() - self._t0, 3)}
        line = json.dumps(rec, sort_keys=True)
        log.info(line)
        if logf:
            logf.write(line + "\n")
            logf.flush()

    def checkpoint(self) -> None:
        d = Path(self.opts.checkpoint_dir)
        self.save_state(d / "state.pt")
        save_checkpoint(d / "generator.ckpt", self.generator_params())
        if self.D is not None:
            save_checkpoint(d / "discriminator.ckpt", self.discriminator_params())

    # -- results and state -------------------------------------------------
    def generator_params(self) -> ParameterSet:
        stage = self.sched.stage
        return ParameterSet.from_module(self.G, self.gen_config, stage, self.iteration)

    def discriminator_params(self) -> ParameterSet:
        return ParameterSet.from_module(self.D, self.disc_config, "disc", self.iteration)

    def state_dict(self) -> dict:
        return {
            "version": STATE_VERSION,
            "stage": self.sched.stage,
            "iteration": self.iteration,
            "seed": self.seed,
            "schedule": asdict(self.sched),
            "generator_config": asdict(self.gen_config),
            "generator": self.G.state_dict(),
            "g_opt": self.g_opt.state_dict(),
            "discriminator": None if self.D is None else self.D.state_dict(),
            "d_opt": None if self.d_opt is None else self.d_opt.state_dict(),
            "history": list(self.history),
        }

    def load_state_dict(self, state: dict) -> None:
        if state.get("version") != STATE_VERSION:
            raise ValueError(f"unsupported train-state version {state.get('version')!r}")
        if state["stage"] != self.sched.stage:
            raise ValueError(f"state is for stage {state['stage']}, trainer is {self.sched.stage}")
        if GeneratorConfig(**state["generator_config"]) != self.gen_config:
            raise ValueError("train-state generator config does not match")
        self.G.load_state_dict(state["generator"])
        self.g_opt.load_state_dict(state["g_opt"])
        if self.D is not None:
            self.D.load_state_dict(state["discriminator"])
            self.d_opt.load_state_dict(state["d_opt"])
        self.iteration = int(state["iteration"])
        self.seed = int(state["seed"])
        self.history = deque(state["history"], maxlen=self.opts.history)

    def save_state(self, path) -> None:
        atomic_save(self.state_dict(), path)

    def load_state(self, path) -> None:
        self.load_state_dict(torch.load(path, map_location="cpu", weights_only=False))


def train_psnr_stage(config: GeneratorConfig, sched: TrainSchedule, dataset: PairedDataset, seed: int,
                     options: TrainerOptions | None = None) -> ParameterSet:
    if sched.stage != "psnr":
        raise ValueError("train_psnr_stage needs a psnr schedule")
    trainer = Trainer(config, sched, dataset, seed, options=options).run()
    return trainer.generator_params()


def train_gan_stage(config: GeneratorConfig, sched: TrainSchedule, dataset: PairedDataset,
                    pretrained: ParameterSet, seed: int, extractor=None,
                    disc_config: DiscriminatorConfig | None = None,
                    options: TrainerOptions | None = None) -> tuple[ParameterSet, ParameterSet]:
    if sched.stage != "gan":
        raise ValueError("train_gan_stage needs a gan schedule")
    trainer = Trainer(config, sched, dataset, seed, pretrained=pretrained, disc_config=disc_config,
                      extractor=extractor, options=options).run()
    return trainer.generator_params(), trainer.discriminator_params()
