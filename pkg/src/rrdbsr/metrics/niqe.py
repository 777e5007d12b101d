"""Natural-scene-statistics quality score (NIQE) and pristine-model fitting.

Per patch, 18 features are taken from the MSCN map (AGGD shape and spread) and
from its products with the horizontal, vertical and two diagonal neighbours.
The same is repeated at half resolution, giving 36 features. The score is the
Mahalanobis-style distance between the image's feature Gaussian and the
pristine one.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import correlate
from scipy.special import gamma

from ..data import ResampleSpec, bicubic_resize

PATCH_SIZE = 96
SHARPNESS_THRESHOLD = 0.75
MODEL_VERSION = 1
N_FEATURES = 36

_GAM = np.arange(0.2, 10.0 + 1e-9, 0.001)
_R_GAM = gamma(2.0 / _GAM) ** 2 / (gamma(1.0 / _GAM) * gamma(3.0 / _GAM))


def _window(size: int = 7, sigma: float = 7.0 / 6.0) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2 * sigma * sigma))
    return g / g.sum()


_WINDOW = _window()


@dataclass
class NiqeModel:
    mu: np.ndarray
    cov: np.ndarray
    patch_size: int = PATCH_SIZE
    sharpness_threshold: float = SHARPNESS_THRESHOLD
    version: int = MODEL_VERSION

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        if self.mu.shape != (N_FEATURES,) or self.cov.shape != (N_FEATURES, N_FEATURES):
            raise ValueError("NIQE model must have a 36-vector mean and 36x36 covariance")

    def save(self, path) -> None:
        np.savez(path, mu=self.mu, cov=self.cov, patch_size=self.patch_size,
                 sharpness_threshold=self.sharpness_threshold, version=self.version)

    @classmethod
    def load(cls, path) -> "NiqeModel":
        with np.load(path) as z:
            return cls(z["mu"], z["cov"], int(z["patch_size"]), float(z["sharpness_threshold"]),
                       int(z["version"]))

    @classmethod
    def default(cls) -> "NiqeModel":
        ref = resources.files("rrdbsr.metrics") / "data" / "niqe_pristine.npz"
        with resources.as_file(ref) as p:
            return cls.load(p)


def to_gray(img) -> np.ndarray:
    """Luma on a 0-255 scale from ``[3, H, W]`` RGB in [0, 1] (2-D input passes through)."""
    if isinstance(img, torch.Tensor):
        img = img.detach().cpu().numpy()
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img * 255.0
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected [3, H, W] or [H, W], got {img.shape}")
    return (0.298936 * img[0] + 0.587043 * img[1] + 0.114021 * img[2]) * 255.0


def mscn(gray: np.ndarray, c: float = 1.0):
    """Mean-subtracted contrast-normalized coefficients and the local deviation map."""
    mu = correlate(gray, _WINDOW, mode="nearest")
    var = correlate(gray * gray, _WINDOW, mode="nearest") - mu * mu
    sigma = np.sqrt(np.abs(var))
    m = (gray - mu) / (sigma + c)
    # flat regions leave rounding noise of arbitrary sign
    m[np.abs(m) < 1e-9] = 0.0
    return m, sigma


def fit_aggd(x):
    """Moment-matching AGGD fit; returns ``(shape, left_std, right_std)``.

    The shape parameter is read off a fine monotone table by linear
    interpolation so that the fit varies continuously with the data.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    left = x[x < 0]
    right = x[x > 0]
    left_std = np.sqrt(np.mean(left * left)) if left.size else 0.0
    right_std = np.sqrt(np.mean(right * right)) if right.size else 0.0
    mean_sq = np.mean(x * x)
    if left_std == 0.0 or right_std == 0.0 or mean_sq == 0.0:
        return 10.0 if mean_sq == 0 else 0.2, left_std, right_std
    gamma_hat = left_std / right_std
    r_hat = np.mean(np.abs(x)) ** 2 / mean_sq
    r_norm = r_hat * (gamma_hat ** 3 + 1) * (gamma_hat + 1) / (gamma_hat ** 2 + 1) ** 2
    alpha = float(np.interp(r_norm, _R_GAM, _GAM))
    return alpha, float(left_std), float(right_std)


def aggd_scales(alpha: float, left_std: float, right_std: float):
    """Left/right AGGD scale parameters from the fitted standard deviations."""
    k = np.sqrt(gamma(1.0 / alpha) / gamma(3.0 / alpha))
    return left_std * k, right_std * k


def _neighbour_products(m: np.ndarray):
    # valid-region products; a horizontal mirror maps d1 <-> d2 exactly
    return (
        m[:, :-1] * m[:, 1:],
        m[:-1, :] * m[1:, :],
        m[:-1, :-1] * m[1:, 1:],
        m[:-1, 1:] * m[1:, :-1],
    )


def patch_features(m: np.ndarray) -> np.ndarray:
    a, ls, rs = fit_aggd(m)
    feats = [a, (ls + rs) / 2.0]
    for prod in _neighbour_products(m):
        a, ls, rs = fit_aggd(prod)
        const = np.sqrt(gamma(1.0 / a)) / np.sqrt(gamma(3.0 / a))
        mean_param = (rs - ls) * (gamma(2.0 / a) / gamma(1.0 / a)) * const
        feats += [a, mean_param, ls * ls, rs * rs]
    return np.asarray(feats)


def _centre_crops(gray: np.ndarray, patch: int):
    """Patch-aligned crops centred in the image.

    An odd margin has no exact centre, so both neighbouring offsets are used;
    this keeps the pooled patch set closed under mirroring.
    """
    h, w = gray.shape
    nh, nw = (h // patch) * patch, (w // patch) * patch
    tops = sorted({(h - nh) // 2, (h - nh + 1) // 2})
    lefts = sorted({(w - nw) // 2, (w - nw + 1) // 2})
    return [gray[t:t + nh, l:l + nw] for t in tops for l in lefts]


def _crop_features(gray: np.ndarray, patch_size: int):
    per_scale, sharp = [], None
    for level in (1, 2):
        if level == 2:
            gray = bicubic_resize(gray, ResampleSpec(Fraction(1, 2)))
        p = patch_size // level
        m, sigma = mscn(gray)
        rows, cols = gray.shape[0] // p, gray.shape[1] // p
        feats, sh = [], []
        for i in range(rows):
            for j in range(cols):
                sl = np.s_[i * p:(i + 1) * p, j * p:(j + 1) * p]
                feats.append(patch_features(m[sl]))
                sh.append(sigma[sl].mean())
        per_scale.append(np.asarray(feats))
        if sharp is None:
            sharp = np.asarray(sh)
    return np.hstack(per_scale), sharp


def image_features(img, patch_size: int = PATCH_SIZE, sharpness_threshold: float | None = None) -> np.ndarray:
    """``[n_patches, 36]`` features; with a threshold, only the sharpest patches are kept."""
    gray = to_gray(img)
    if gray.shape[0] < patch_size or gray.shape[1] < patch_size:
        raise ValueError(f"image {gray.shape} is smaller than one {patch_size}x{patch_size} patch")
    parts = [_crop_features(c, patch_size) for c in _centre_crops(gray, patch_size)]
    feats = np.vstack([f for f, _ in parts])
    sharp = np.concatenate([s for _, s in parts])
    if sharpness_threshold is not None:
        feats = feats[sharp > sharpness_threshold * sharp.max()]
    return feats


def niqe_distance(features: np.ndarray, model: NiqeModel) -> float:
    feats = np.nan_to_num(np.atleast_2d(features))
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) if len(feats) > 1 else np.zeros((feats.shape[1],) * 2)
    d = model.mu - mu
    inv = np.linalg.pinv((model.cov + cov) / 2.0, rcond=1e-10, hermitian=True)
    return float(np.sqrt(max(d @ inv @ d, 0.0)))


def niqe(img, model: NiqeModel | None = None) -> float:
    """No-reference quality score, lower is better."""
    model = model or NiqeModel.default()
    return niqe_distance(image_features(img, model.patch_size), model)


# horizontal mirror swaps the two diagonal feature groups at each scale
FLIP_PERMUTATION = np.array([
    *[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 14, 15, 16, 17, 10, 11, 12, 13],
    *[18 + i for i in (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 14, 15, 16, 17, 10, 11, 12, 13)],
])


def fit_niqe_model(images, patch_size: int = PATCH_SIZE,
                   sharpness_threshold: float = SHARPNESS_THRESHOLD) -> NiqeModel:
    """Fit the pristine Gaussian from sharp patches of ``images``.

    The fit is made mirror-symmetric so scores do not depend on orientation.
    """
    feats = np.vstack([image_features(im, patch_size, sharpness_threshold) for im in images])
    feats = np.nan_to_num(feats)
    feats = np.vstack([feats, feats[:, FLIP_PERMUTATION]])
    return NiqeModel(feats.mean(axis=0), np.cov(feats, rowvar=False), patch_size, sharpness_threshold)


def load_niqe_model(path=None) -> NiqeModel:
    return NiqeModel.default() if path is None else NiqeModel.load(Path(path))
