"""Optimizers, the training loop and evaluation."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .architectures import UNet
from .data import PairedSample, stack_batch
from .tensor import Tape, Tensor, backward

__all__ = [
    "OptimConfig",
    "AdamState",
    "TrainingError",
    "adam_step",
    "sgd_step",
    "HistoryRow",
    "train",
    "evaluate",
    "metric_config_for",
]

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Raised when training diverges."""


@dataclass
class OptimConfig:
    kind: str = "adam"
    lr: float = 5e-6
    beta1: float = 0.7
    beta2: float = 0.95
    eps: float = 1e-8
    batch: int = 8
    epochs: int = 1
    seed: int = 0
    # switch from adam to sgd at this epoch (0-based); None keeps adam throughout
    sgd_from_epoch: int | None = None

    def __post_init__(self):
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"optimizer kind must be 'adam' or 'sgd', got {self.kind!r}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if self.lr < 0:
            raise ValueError(f"lr must be >= 0, got {self.lr}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              cfg: OptimConfig) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are left untouched."""
    t = state.step + 1
    bc1 = 1.0 - cfg.beta1 ** t
    bc2 = 1.0 - cfg.beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient {g.shape} does not match parameter {k!r} {p.shape}")
        m = state.m.get(k, np.zeros_like(p))
        v = state.v.get(k, np.zeros_like(p))
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[k] = (p - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.dtype)
        new_m[k], new_v[k] = m.astype(p.dtype), v.astype(p.dtype)
    return new_params, AdamState(t, new_m, new_v)


def sgd_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
             lr: float) -> dict[str, np.ndarray]:
    out = {}
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ValueError(f"sgd_step: gradient {grads[k].shape} does not match parameter {k!r} {p.shape}")
        out[k] = (p - lr * grads[k]).astype(p.dtype)
    return out


def metric_config_for(size: int) -> metrics.MetricConfig:
    """Largest MS-SSIM scale count (up to 5) that fits a ``size``-pixel side."""
    scales = 5
    while scales > 1 and metrics.MetricConfig(scales=scales).min_size > size:
        scales -= 1
    return metrics.MetricConfig(scales=scales)


@dataclass(frozen=True)
class HistoryRow:
    step: int
    epoch: int
    loss: float
    mse: float


LossFn = Callable[[Tensor, Tensor], Tensor]


def _param_norms(params: Mapping[str, np.ndarray]) -> str:
    norms = sorted(((float(np.linalg.norm(v)), k) for k, v in params.items()), reverse=True)[:5]
    return ", ".join(f"{k}={n:.3e}" for n, k in norms)


def train(model: UNet, dataset: Sequence[PairedSample], optim: OptimConfig,
          loss_fn: LossFn | None = None, epochs: int | None = None, seed: int | None = None,
          max_steps: int | None = None, on_step: Callable[[HistoryRow], None] | None = None,
          state: AdamState | None = None) -> tuple[list[HistoryRow], AdamState]:
    """Train ``model`` in place.

    Each epoch visits the dataset in a seeded random order, one batch per
    step. Returns the per-step history and the final optimizer state.
    """
    if not dataset:
        raise ValueError("train: dataset is empty")
    epochs = optim.epochs if epochs is None else epochs
    seed = optim.seed if seed is None else seed
    if loss_fn is None:
        mcfg = metric_config_for(min(dataset[0].target.shape[1:]))
        loss_fn = lambda p, t: metrics.training_loss(p, t, mcfg)  # noqa: E731
    rng = np.random.default_rng(seed)
    state = state or AdamState()
    history: list[HistoryRow] = []
    step = 0
    for epoch in range(epochs):
        use_sgd = optim.kind == "sgd" or (optim.sgd_from_epoch is not None and epoch >= optim.sgd_from_epoch)
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), optim.batch):
            if max_steps is not None and step >= max_steps:
                return history, state
            raw, target = stack_batch([dataset[i] for i in order[start:start + optim.batch]])
            tape = Tape()
            leaves = tape.leaves_from(model.params)
            pred = model.apply(leaves, raw.astype(model.dtype))
            target_t = Tensor(target.astype(model.dtype))
            loss = loss_fn(pred, target_t)
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise TrainingError(f"non-finite loss {loss_val} at step {step}; "
                                    f"largest parameter norms: {_param_norms(model.params)}")
            grads = backward(tape, loss).by_name()
            if use_sgd:
                model.params = sgd_step(model.params, grads, optim.lr)
            else:
                model.params, state = adam_step(model.params, grads, state, optim)
            batch_mse = float(np.mean((pred.data - target_t.data) ** 2))
            row = HistoryRow(step, epoch, loss_val, batch_mse)
            history.append(row)
            if on_step is not None:
                on_step(row)
            logger.debug("step %d loss %.6f mse %.6f", step, loss_val, batch_mse)
            step += 1
    return history, state


def evaluate(model: UNet, dataset: Sequence[PairedSample], batch: int = 8,
             cfg: metrics.MetricConfig | None = None) -> dict[str, float]:
    """Per-sample averages of mse, psnr, ssim and ms_ssim."""
    if not dataset:
        raise ValueError("evaluate: dataset is empty")
    cfg = cfg or metric_config_for(min(dataset[0].target.shape[1:]))
    sums = {"mse": 0.0, "psnr": 0.0, "ssim": 0.0, "ms_ssim": 0.0}
    for start in range(0, len(dataset), batch):
        raw, target = stack_batch(list(dataset[start:start + batch]))
        pred = model.forward(raw.astype(model.dtype)).data.astype(np.float64)
        for p, t in zip(pred, target.astype(np.float64)):
            sums["mse"] += metrics.mse(p, t).item()
            sums["psnr"] += metrics.psnr(p, t)
            sums["ssim"] += metrics.ssim(p, t, cfg).item()
            sums["ms_ssim"] += metrics.ms_ssim(p, t, cfg).item()
    return {k: v / len(dataset) for k, v in sums.items()}
