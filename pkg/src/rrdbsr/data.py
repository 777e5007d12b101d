"""Image ingestion, MATLAB-style bicubic resampling, paired cropping and augmentation.

Arrays follow the ``[..., C, H, W]`` layout with values in ``[0, 1]``. Functions
accept numpy arrays or torch tensors unless stated otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch
from PIL import Image

KERNEL_SUPPORT = 4.0


def cubic(x):
    """Keys cubic convolution kernel with a = -0.5."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    near = (1.5 * x3 - 2.5 * x2 + 1.0) * (x <= 1)
    far = (-0.5 * x3 + 2.5 * x2 - 4.0 * x + 2.0) * ((x > 1) & (x <= 2))
    return near + far


@dataclass(frozen=True)
class ResampleSpec:
    scale: float | Fraction
    antialias: bool = True
    kernel_support: float = KERNEL_SUPPORT

    def __post_init__(self):
        if not float(self.scale) > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def output_size(n: int, scale) -> int:
    return int(round(n * float(scale)))


def resize_weights(in_len: int, scale, antialias: bool = True, out_len: int | None = None) -> np.ndarray:
    """Dense ``[out_len, in_len]`` interpolation matrix for one axis.

    Rows sum to one. Out-of-range taps are folded onto the nearest edge pixel.
    """
    scale = float(scale)
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if out_len is None:
        out_len = output_size(in_len, scale)
    if out_len < 1:
        raise ValueError(f"resize of length {in_len} by {scale} rounds to zero")

    widen = antialias and scale < 1
    width = KERNEL_SUPPORT / scale if widen else KERNEL_SUPPORT

    x = np.arange(1, out_len + 1, dtype=np.float64)
    # 1-based input coordinate of each output pixel centre
    u = x / scale + 0.5 * (1.0 - 1.0 / scale)
    left = np.floor(u - width / 2.0)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    if widen:
        w = scale * cubic(scale * dist)
    else:
        w = cubic(dist)
    w = w / w.sum(axis=1, keepdims=True)

    cols = np.clip(idx, 1, in_len).astype(np.int64) - 1
    mat = np.zeros((out_len, in_len), dtype=np.float64)
    rows = np.repeat(np.arange(out_len), taps)
    np.add.at(mat, (rows, cols.ravel()), w.ravel())
    return mat


def _apply(img, wh: np.ndarray, ww: np.ndarray):
    # Rows sum to one, so resampling around a reference pixel is the same map;
    # it keeps constant regions exactly constant instead of off by an ulp.
    if isinstance(img, torch.Tensor):
        th = torch.as_tensor(wh, dtype=img.dtype, device=img.device)
        tw = torch.as_tensor(ww, dtype=img.dtype, device=img.device)
        ref = img[..., :1, :1]
        return ref + th @ (img - ref) @ tw.T
    arr = np.asarray(img)
    a = arr.astype(np.float64)
    ref = a[..., :1, :1]
    out = ref + wh @ (a - ref) @ ww.T
    return out.astype(arr.dtype) if np.issubdtype(arr.dtype, np.floating) else out


def bicubic_resize(img, spec: ResampleSpec | float, size: tuple[int, int] | None = None):
    """Resize the last two axes of ``img`` with the bicubic kernel.

    Downscaling widens the kernel by ``1/scale`` when ``spec.antialias`` is set.
    ``size`` overrides the rounded output size (used when inverting a resize of
    an odd-sized image).
    """
    if not isinstance(spec, ResampleSpec):
        spec = ResampleSpec(spec)
    if img.ndim < 2 or img.shape[-1] == 0 or img.shape[-2] == 0:
        raise ValueError("cannot resize an empty image")
    h, w = img.shape[-2], img.shape[-1]
    oh, ow = size if size is not None else (output_size(h, spec.scale), output_size(w, spec.scale))
    wh = resize_weights(h, spec.scale, spec.antialias, oh)
    ww = resize_weights(w, spec.scale, spec.antialias, ow)
    return _apply(img, wh, ww)


def downscale(img, scale: int):
    return bicubic_resize(img, ResampleSpec(Fraction(1, scale)))


def upscale(img, scale: int):
    return bicubic_resize(img, ResampleSpec(scale))


def crop_paired_patch(hr, lr, hr_patch: int, scale: int, rng_seed):
    """Crop aligned patches; the HR origin is always the LR origin times ``scale``."""
    if hr_patch % scale:
        raise ValueError(f"hr_patch {hr_patch} is not divisible by scale {scale}")
    lr_patch = hr_patch // scale
    H, W = hr.shape[-2:]
    h, w = lr.shape[-2:]
    if H < hr_patch or W < hr_patch:
        raise ValueError(f"patch {hr_patch} larger than HR image {H}x{W}")
    if h * scale != H or w * scale != W:
        raise ValueError(f"LR {h}x{w} does not pair with HR {H}x{W} at scale {scale}")
    rng = np.random.default_rng(rng_seed)
    top = int(rng.integers(0, h - lr_patch + 1))
    left = int(rng.integers(0, w - lr_patch + 1))
    lr_crop = lr[..., top:top + lr_patch, left:left + lr_patch]
    hr_crop = hr[..., top * scale:top * scale + hr_patch, left * scale:left * scale + hr_patch]
    return hr_crop, lr_crop


def augment(patch_pair, flip: bool, rot_quarter: int):
    """Apply the same horizontal flip and quarter-turn rotation to every member."""
    if rot_quarter not in (0, 1, 2, 3):
        raise ValueError(f"rot_quarter must be in 0..3, got {rot_quarter}")
    out = []
    for p in patch_pair:
        if isinstance(p, torch.Tensor):
            if flip:
                p = torch.flip(p, dims=(-1,))
            p = torch.rot90(p, rot_quarter, dims=(-2, -1))
        else:
            if flip:
                p = p[..., ::-1]
            p = np.ascontiguousarray(np.rot90(p, rot_quarter, axes=(-2, -1)))
        out.append(p)
    return tuple(out)


def rgb_to_y(img):
    """BT.601 luma in [16/255, 235/255] for RGB input in [0, 1]; drops the channel axis."""
    if img.ndim < 3 or img.shape[-3] != 3:
        raise ValueError(f"expected 3 channels on axis -3, got shape {tuple(img.shape)}")
    r, g, b = img[..., 0, :, :], img[..., 1, :, :], img[..., 2, :, :]
    return (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0


def read_image(path) -> np.ndarray:
    """Read an 8-bit image as float32 ``[3, H, W]`` in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def to_uint8(img) -> np.ndarray:
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    img = np.asarray(img, dtype=np.float64)
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def write_image(path, img) -> None:
    """Write ``[3, H, W]`` in [0, 1] as an 8-bit RGB PNG."""
    arr = to_uint8(img).transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_manifest(path) -> list[Path]:
    """HR image paths listed one per line; relative entries resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    out = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        out.append(p if p.is_absolute() else base / p)
    return out


def mod_crop(img, scale: int):
    h, w = img.shape[-2:]
    return img[..., : h - h % scale, : w - w % scale]


class PairedDataset:
    """In-memory (LR, HR) pairs with deterministic per-iteration batch sampling.

    The batch for iteration ``i`` depends only on ``(seed, i)``, so sampling needs
    no carried RNG state and resumed runs see the same data as uninterrupted ones.
    """

    def __init__(self, hr_images, scale: int = 4, lr_images=None):
        self.scale = scale
        self.hr = [np.asarray(mod_crop(im, scale), dtype=np.float32) for im in hr_images]
        if lr_images is None:
            self.lr = [np.clip(downscale(im, scale), 0.0, 1.0).astype(np.float32) for im in self.hr]
        else:
            self.lr = [np.asarray(im, dtype=np.float32) for im in lr_images]
            for h, l in zip(self.hr, self.lr):
                if l.shape[-2] * scale != h.shape[-2] or l.shape[-1] * scale != h.shape[-1]:
                    raise ValueError(f"LR {l.shape} does not pair with HR {h.shape}")
        if not self.hr:
            raise ValueError("dataset is empty")

    @classmethod
    def from_manifest(cls, manifest, scale: int = 4, lr_dir=None):
        paths = load_manifest(manifest)
        hr = [read_image(p) for p in paths]
        lr = None
        if lr_dir is not None:
            lr = [read_image(Path(lr_dir) / p.name) for p in paths]
            hr = [mod_crop(h, scale)[..., : l.shape[-2] * scale, : l.shape[-1] * scale] for h, l in zip(hr, lr)]
        return cls(hr, scale, lr)

    def __len__(self):
        return len(self.hr)

    def sample(self, seed: int, iteration: int, batch: int, hr_patch: int, augment_data: bool = True):
        rng = np.random.default_rng([seed, iteration])
        lrs, hrs = [], []
        for _ in range(batch):
            k = int(rng.integers(len(self.hr)))
            hr, lr = crop_paired_patch(self.hr[k], self.lr[k], hr_patch, self.scale, int(rng.integers(2**63)))
            flip, rot = bool(rng.integers(2)), int(rng.integers(4))
            if augment_data:
                hr, lr = augment((hr, lr), flip, rot)
            lrs.append(lr)
            hrs.append(hr)
        return torch.from_numpy(np.stack(lrs)), torch.from_numpy(np.stack(hrs))
