"""MSE, PSNR, SSIM, MS-SSIM and the training loss."""

import math

import numpy as np
import pytest

from hyperconv_kit import metrics
from hyperconv_kit.metrics import MetricConfig
from hyperconv_kit.tensor import ShapeError, Tensor, finite_difference_check


def ssim_loop_oracle(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
                     k1: float = 0.01, k2: float = 0.03) -> float:
    """SSIM of two (C, H, W) images by explicit per-window weighted sums with a 2-D Gaussian kernel."""
    x = np.arange(window) - (window - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    g2 = np.outer(g, g)
    g2 /= g2.sum()
    c1, c2 = k1 ** 2, k2 ** 2
    c, h, w = a.shape
    vals = []
    for ch in range(c):
        for i in range(h - window + 1):
            for j in range(w - window + 1):
                pa = a[ch, i:i + window, j:j + window]
                pb = b[ch, i:i + window, j:j + window]
                ma, mb = np.sum(g2 * pa), np.sum(g2 * pb)
                va = np.sum(g2 * (pa - ma) ** 2)
                vb = np.sum(g2 * (pb - mb) ** 2)
                cov = np.sum(g2 * (pa - ma) * (pb - mb))
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def noisy_pair(seed: int, size: int = 64, channels: int = 3, noise: float = 0.1):
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    base = np.stack([0.5 + 0.3 * np.sin(2 * np.pi * (k + 1) * (xx + yy)) for k in range(channels)])
    a = np.clip(base + 0.05 * rng.standard_normal(base.shape), 0, 1)
    b = np.clip(a + noise * rng.standard_normal(a.shape), 0, 1)
    return a, b


class TestConfig:
    def test_weights_sum_to_one(self):
        assert sum(MetricConfig().weights) == pytest.approx(1.0, abs=1e-6)
        assert sum(MetricConfig(scales=3).weights) == pytest.approx(1.0, abs=1e-6)

    def test_reduced_weights_keep_ratios(self):
        w = MetricConfig(scales=3).weights
        assert w[1] / w[0] == pytest.approx(0.2856 / 0.0448)

    def test_min_size(self):
        assert MetricConfig().min_size == 176
        assert MetricConfig(scales=3).min_size == 44

    def test_invalid_scales(self):
        with pytest.raises(ValueError):
            MetricConfig(scales=6)


class TestMsePsnr:
    def test_mse_hand_case(self):
        assert metrics.mse(np.array([0.0, 1.0]), np.array([1.0, 1.0])).item() == 0.5

    def test_psnr_identical_is_inf(self, rng):
        x = rng.uniform(size=(3, 8, 8))
        assert metrics.psnr(x, x) == math.inf

    def test_psnr_formula(self):
        assert metrics.psnr(np.zeros(4), np.full(4, 0.1)) == pytest.approx(20.0)

    def test_mse_loop_oracle(self, rng):
        a, b = rng.uniform(size=(17, 23)), rng.uniform(size=(17, 23))
        acc = 0.0
        for i in range(17):
            for j in range(23):
                acc += (a[i, j] - b[i, j]) ** 2
        assert abs(metrics.mse(a, b).item() - acc / (17 * 23)) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError, match="mse"):
            metrics.mse(np.zeros((2, 2)), np.zeros((2, 3)))


class TestSsim:
    def test_identity(self, rng):
        x = rng.uniform(size=(3, 32, 32))
        assert metrics.ssim(x, x).item() == pytest.approx(1.0, abs=1e-9)
        y = rng.uniform(size=(3, 176, 176))
        assert metrics.ms_ssim(y, y).item() == pytest.approx(1.0, abs=1e-9)

    def test_symmetric(self):
        a, b = noisy_pair(0)
        assert abs(metrics.ssim(a, b).item() - metrics.ssim(b, a).item()) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_loop_oracle(self, seed):
        a, b = noisy_pair(seed)
        assert abs(metrics.ssim(a, b).item() - ssim_loop_oracle(a, b)) < 1e-6

    def test_batched_equals_mean_of_samples(self):
        pairs = [noisy_pair(s, size=48) for s in range(3)]
        a = np.stack([p[0] for p in pairs])
        b = np.stack([p[1] for p in pairs])
        per = [metrics.ssim(p[0], p[1]).item() for p in pairs]
        assert metrics.ssim(a, b).item() == pytest.approx(np.mean(per), rel=1e-12)

    def test_range(self):
        rng = np.random.default_rng(3)
        for _ in range(3):
            a, b = rng.uniform(size=(2, 3, 44, 44)), rng.uniform(size=(2, 3, 44, 44))
            for v in (metrics.ssim(a, b).item(), metrics.ms_ssim(a, b, MetricConfig(scales=3)).item()):
                assert -1.0 < v <= 1.0

    def test_too_small(self):
        with pytest.raises(ShapeError, match="176"):
            metrics.ms_ssim(np.zeros((3, 100, 100)), np.zeros((3, 100, 100)))
        with pytest.raises(ShapeError, match="11"):
            metrics.ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))

    def test_ms_ssim_monotone_in_noise(self):
        a, _ = noisy_pair(0, size=176)
        rng = np.random.default_rng(0)
        vals = [metrics.ms_ssim(a, np.clip(a + s * rng.standard_normal(a.shape), 0, 1)).item()
                for s in (0.02, 0.08, 0.2)]
        assert vals[0] > vals[1] > vals[2]

    def test_single_scale_ms_ssim_is_ssim(self):
        a, b = noisy_pair(1, size=32)
        cfg = MetricConfig(scales=1)
        assert metrics.ms_ssim(a, b, cfg).item() == pytest.approx(metrics.ssim(a, b, cfg).item(), rel=1e-12)


class TestTrainingLoss:
    def test_zero_on_equal(self, rng):
        x = rng.uniform(size=(1, 3, 176, 176))
        assert abs(metrics.training_loss(x, x).item()) < 1e-8

    def test_nonnegative(self):
        rng = np.random.default_rng(8)
        cfg = MetricConfig(scales=3)
        for _ in range(5):
            a, b = rng.uniform(size=(3, 44, 44)), rng.uniform(size=(3, 44, 44))
            assert metrics.training_loss(a, b, cfg).item() >= 0.0

    def test_gradient_full_size(self):
        a, b = noisy_pair(4, size=176, channels=1)
        rng = np.random.default_rng(0)
        # interior pixels: near the border few windows overlap and the gradient drops to ~1e-10,
        # where the relative error measures difference-quotient roundoff rather than the gradient
        idx = [tuple(rng.integers(11, 165, 2).tolist()) for _ in range(12)]
        idx = [(0, i, j) for i, j in idx]
        err = finite_difference_check(lambda t: metrics.training_loss(t, Tensor(b)), a, indices=idx)
        assert err < 1e-4

    def test_gradient_reduced_scales(self):
        a, b = noisy_pair(6, size=44, channels=2)
        cfg = MetricConfig(scales=3)
        err = finite_difference_check(lambda t: metrics.training_loss(t, Tensor(b), cfg), a,
                                      indices=[(c, i, j) for c in range(2) for i in (0, 13, 43) for j in (5, 30)])
        assert err < 1e-4
