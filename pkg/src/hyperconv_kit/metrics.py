"""Image fidelity metrics and the training loss.

SSIM uses an 11-tap Gaussian window (sigma 1.5) applied separably with
valid padding, so no border windows are formed. MS-SSIM averages 2x2
between scales and multiplies per-scale contrast-structure terms with the
final-scale SSIM, each raised to its scale weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import image_ops as ops
from .tensor import ShapeError, Tensor, as_tensor, clamp, power

__all__ = ["MetricConfig", "mse", "psnr", "ssim", "ms_ssim", "training_loss", "gaussian_window"]

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class MetricConfig:
    """SSIM / MS-SSIM constants.

    ``scales`` below 5 keeps the first ``scales`` standard weights and
    renormalizes them; this is the reduced variant for small images.
    """

    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0
    scales: int = 5

    def __post_init__(self):
        if not 1 <= self.scales <= len(MS_SSIM_WEIGHTS):
            raise ValueError(f"scales must be in 1..{len(MS_SSIM_WEIGHTS)}, got {self.scales}")

    @property
    def weights(self) -> tuple[float, ...]:
        # the published weights sum to 1.0001; normalize so they sum to one
        w = np.asarray(MS_SSIM_WEIGHTS[: self.scales])
        return tuple(w / w.sum())

    @property
    def min_size(self) -> int:
        return self.window * 2 ** (self.scales - 1)


DEFAULT = MetricConfig()


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _valid_filter_matrix(n: int, taps: np.ndarray) -> np.ndarray:
    k = len(taps)
    m = np.zeros((n - k + 1, n))
    for i in range(n - k + 1):
        m[i, i:i + k] = taps
    return m


def _check_pair(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


def mse(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_pair("mse", a, b)
    d = a - b
    return (d * d).mean()


def psnr(a, b, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    err = mse(a, b).item()
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(max_val ** 2 / err)


def _ssim_terms(a: Tensor, b: Tensor, cfg: MetricConfig) -> tuple[Tensor, Tensor]:
    """Per-(sample, channel) mean SSIM and mean contrast-structure term."""
    h, w = a.shape[2], a.shape[3]
    if h < cfg.window or w < cfg.window:
        raise ShapeError(f"ssim: image {h}x{w} smaller than the {cfg.window}-tap window")
    taps = gaussian_window(cfg.window, cfg.sigma)
    rows, cols = _valid_filter_matrix(h, taps), _valid_filter_matrix(w, taps)

    def filt(x):
        return ops.separable_linear(x, rows, cols)

    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    s_aa = filt(a * a) - mu_aa
    s_bb = filt(b * b) - mu_bb
    s_ab = filt(a * b) - mu_ab
    cs_map = (2.0 * s_ab + c2) / (s_aa + s_bb + c2)
    lum_map = (2.0 * mu_ab + c1) / (mu_aa + mu_bb + c1)
    return (lum_map * cs_map).mean(axis=(2, 3)), cs_map.mean(axis=(2, 3))


def _as_nchw(name: str, a, b) -> tuple[Tensor, Tensor]:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    _check_pair(name, a, b)
    if a.ndim == 3:
        a, b = a.reshape(1, *a.shape), b.reshape(1, *b.shape)
    if a.ndim != 4:
        raise ShapeError(f"{name}: expected CHW or NCHW images, got shape {a.shape}")
    return a, b


def ssim(a, b, cfg: MetricConfig = DEFAULT) -> Tensor:
    """Mean structural similarity over all windows, channels and samples."""
    a, b = _as_nchw("ssim", a, b)
    return _ssim_terms(a, b, cfg)[0].mean()


def ms_ssim(a, b, cfg: MetricConfig = DEFAULT) -> Tensor:
    """Multi-scale SSIM, averaged over samples and channels.

    Negative per-scale terms are floored at a tiny positive value before
    exponentiation, which keeps the result real and the gradient finite.
    """
    a, b = _as_nchw("ms_ssim", a, b)
    side = min(a.shape[2], a.shape[3])
    if side < cfg.min_size:
        raise ShapeError(f"ms_ssim: images need >= {cfg.min_size} pixels per side for "
                         f"{cfg.scales} scales, got {a.shape[2]}x{a.shape[3]}")
    weights = cfg.weights
    total = None
    for j, wj in enumerate(weights):
        s, cs = _ssim_terms(a, b, cfg)
        term = s if j == len(weights) - 1 else cs
        factor = power(clamp(term, lo=1e-12), wj)
        total = factor if total is None else total * factor
        if j < len(weights) - 1:
            a, b = ops.avg_pool2x(a), ops.avg_pool2x(b)
    return total.mean()


def training_loss(pred, target, cfg: MetricConfig = DEFAULT) -> Tensor:
    """``mse + (1 - ms_ssim)``."""
    return mse(pred, target) + (1.0 - ms_ssim(pred, target, cfg))
