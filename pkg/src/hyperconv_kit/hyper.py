"""HyperConvolution: convolutions whose filters are predicted per sample.

Filter features are globally pooled, passed through a three-layer MLP and
reshaped into one filter bank per sample. Each bank is L1-normalized,
offset by a learned constant filter and applied to its own sample with a
grouped convolution (one group per sample).
"""

from __future__ import annotations

import dataclasses
from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from . import image_ops as ops
from .tensor import ShapeError, Tensor, abs as tabs, as_tensor, clamp, div

__all__ = [
    "HyperConvConfig",
    "Affine",
    "HyperConvParams",
    "EmbedParams",
    "HyperConvEmbedParams",
    "embed_config",
    "pool_features",
    "predict_filters",
    "normalize_filters",
    "apply_filters",
    "hyperconv_forward",
    "embed_forward",
    "hyperconv_embed_forward",
    "EMBED_BASE",
]

L1_EPS = 1e-12
EMBED_BASE = 32


@dataclass(frozen=True)
class HyperConvConfig:
    """Hyperparameters of one HyperConvolution layer.

    Attributes:
        n_in_forward: Channels of the forward input (convolved).
        n_in_hyper: Channels of the filter input (pooled).
        n_out: Output channels.
        f_size: Spatial extent of the predicted square filters (odd).
        n_hid: Width of the two hidden MLP layers.
        use_bias: Add a clamped per-channel bias predicted from the pooled features.
        use_gain: Multiply by a clamped per-channel gain predicted from the pooled features.
        pool: ``"max"`` or ``"avg"`` global pooling of the filter input.
        mlp_activation: ``"relu"`` or ``"leaky_relu"`` between MLP layers.
    """

    n_in_forward: int
    n_in_hyper: int
    n_out: int
    f_size: int = 3
    n_hid: int = 256
    use_bias: bool = False
    use_gain: bool = False
    pool: str = "max"
    mlp_activation: str = "relu"

    def __post_init__(self):
        for name in ("n_in_forward", "n_in_hyper", "n_out", "f_size", "n_hid"):
            if getattr(self, name) < 1:
                raise ValueError(f"HyperConvConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.f_size % 2 == 0:
            raise ValueError(f"HyperConvConfig.f_size must be odd, got {self.f_size}")
        if self.pool not in ("max", "avg"):
            raise ValueError(f"HyperConvConfig.pool must be 'max' or 'avg', got {self.pool!r}")
        if self.mlp_activation not in ("relu", "leaky_relu"):
            raise ValueError(f"unknown MLP activation {self.mlp_activation!r}")

    @property
    def filter_numel(self) -> int:
        """Number of scalars in one predicted filter bank."""
        return self.f_size * self.f_size * self.n_in_forward * self.n_out

    @property
    def mlp_dims(self) -> tuple[tuple[int, int], ...]:
        return ((self.n_in_hyper, self.n_hid), (self.n_hid, self.n_hid), (self.n_hid, self.filter_numel))


def embed_config(n_in_forward: int, n_out: int, f_size: int = 3, n_hid: int = 64,
                 use_bias: bool = False, use_gain: bool = False) -> HyperConvConfig:
    """Config of the self-embedding variant: 128 pooled features, average pooling, leaky MLP."""
    return HyperConvConfig(n_in_forward, EMBED_BASE * 4, n_out, f_size=f_size, n_hid=n_hid,
                           use_bias=use_bias, use_gain=use_gain, pool="avg",
                           mlp_activation="leaky_relu")


@dataclass
class Affine:
    """``y = x @ weight + bias`` with weight of shape (in, out)."""

    weight: np.ndarray | Tensor
    bias: np.ndarray | Tensor

    @classmethod
    def init(cls, n_in: int, n_out: int, rng: np.random.Generator, scale: float | None = None,
             dtype=np.float32) -> Affine:
        std = np.sqrt(2.0 / n_in) if scale is None else scale
        return cls((rng.standard_normal((n_in, n_out)) * std).astype(dtype), np.zeros(n_out, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.affine(x, as_tensor(self.weight, like=x), as_tensor(self.bias, like=x))


def _flatten(obj, prefix: str, out: dict) -> dict:
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if val is None:
            continue
        if dataclasses.is_dataclass(val):
            _flatten(val, key + ".", out)
        elif isinstance(val, tuple):
            for i, item in enumerate(val):
                _flatten(item, f"{key}.{i}.", out)
        else:
            out[key] = val
    return out


def _map(obj, fn):
    changes = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        if val is None:
            continue
        if dataclasses.is_dataclass(val):
            changes[f.name] = _map(val, fn)
        elif isinstance(val, tuple):
            changes[f.name] = tuple(_map(item, fn) for item in val)
        else:
            changes[f.name] = fn(val)
    return dataclasses.replace(obj, **changes)


class _ParamTree:
    """Mixin: flatten to ``{dotted.name: array}`` and map over leaves."""

    def flat(self, prefix: str = "") -> dict:
        return _flatten(self, prefix, {})

    def map(self, fn: Callable):
        return _map(self, fn)


@dataclass
class HyperConvParams(_ParamTree):
    """Learnable state of a HyperConvolution.

    ``const_filter`` has shape (1, C_O, C_I, f, f) and is added to every
    normalized predicted bank.
    """

    mlp: tuple[Affine, Affine, Affine]
    const_filter: np.ndarray | Tensor
    bias_head: Affine | None = None
    gain_head: Affine | None = None

    @classmethod
    def init(cls, cfg: HyperConvConfig, rng: np.random.Generator, dtype=np.float32) -> HyperConvParams:
        mlp = tuple(Affine.init(i, o, rng, dtype=dtype) for i, o in cfg.mlp_dims)
        k, ci, co = cfg.f_size, cfg.n_in_forward, cfg.n_out
        const = rng.standard_normal((1, co, ci, k, k)) / np.sqrt(ci * k * k / 2) / 2
        # heads start as exact no-ops (zero bias, unit gain) and sit inside their clamp ranges
        bias = Affine.init(cfg.n_in_hyper, co, rng, scale=0.0, dtype=dtype) if cfg.use_bias else None
        gain = Affine.init(cfg.n_in_hyper, co, rng, scale=0.0, dtype=dtype) if cfg.use_gain else None
        return cls(mlp, const.astype(dtype), bias, gain)

    @classmethod
    def from_flat(cls, cfg: HyperConvConfig, flat: Mapping, prefix: str = "") -> HyperConvParams:
        def aff(name):
            return Affine(flat[f"{prefix}{name}.weight"], flat[f"{prefix}{name}.bias"])

        return cls(
            tuple(aff(f"mlp.{i}") for i in range(3)),
            flat[f"{prefix}const_filter"],
            aff("bias_head") if cfg.use_bias else None,
            aff("gain_head") if cfg.use_gain else None,
        )


@dataclass
class EmbedParams(_ParamTree):
    """Three strided 3x3 convolutions (weight, bias) of the self-embedding."""

    convs: tuple[Affine, Affine, Affine]

    @classmethod
    def init(cls, n_in: int, rng: np.random.Generator, dtype=np.float32) -> EmbedParams:
        chans = (n_in, EMBED_BASE, EMBED_BASE * 2, EMBED_BASE * 4)
        convs = []
        for ci, co in zip(chans[:-1], chans[1:]):
            w = rng.standard_normal((co, ci, 3, 3)) * np.sqrt(2.0 / (ci * 9))
            convs.append(Affine(w.astype(dtype), np.zeros(co, dtype)))
        return cls(tuple(convs))


@dataclass
class HyperConvEmbedParams(_ParamTree):
    hyper: HyperConvParams
    embed: EmbedParams

    @classmethod
    def init(cls, cfg: HyperConvConfig, rng: np.random.Generator, dtype=np.float32) -> HyperConvEmbedParams:
        return cls(HyperConvParams.init(cfg, rng, dtype), EmbedParams.init(cfg.n_in_forward, rng, dtype))

    @classmethod
    def from_flat(cls, cfg: HyperConvConfig, flat: Mapping, prefix: str = "") -> HyperConvEmbedParams:
        convs = tuple(Affine(flat[f"{prefix}embed.convs.{i}.weight"], flat[f"{prefix}embed.convs.{i}.bias"])
                      for i in range(3))
        return cls(HyperConvParams.from_flat(cfg, flat, prefix + "hyper."), EmbedParams(convs))


# ---------------------------------------------------------------------------
# forward


def pool_features(cfg: HyperConvConfig, F: Tensor) -> Tensor:
    """Globally pool the filter input to (N, C_F)."""
    if F.ndim != 4 or F.shape[1] != cfg.n_in_hyper:
        raise ShapeError(f"filter input {F.shape} does not have {cfg.n_in_hyper} channels")
    pooled = ops.global_max_pool(F) if cfg.pool == "max" else ops.global_avg_pool(F)
    return pooled.reshape(F.shape[0], cfg.n_in_hyper)


def _mlp(params: HyperConvParams, cfg: HyperConvConfig, pooled: Tensor) -> Tensor:
    act = ops.relu if cfg.mlp_activation == "relu" else ops.leaky_relu
    h = act(params.mlp[0](pooled))
    h = act(params.mlp[1](h))
    return params.mlp[2](h)


def predict_filters(params: HyperConvParams, cfg: HyperConvConfig, F: Tensor) -> Tensor:
    """Raw (un-normalized) filter banks of shape (N, C_O, C_I, f, f)."""
    F = as_tensor(F)
    n = F.shape[0]
    flat = _mlp(params, cfg, pool_features(cfg, F))
    return flat.reshape(n, cfg.n_out, cfg.n_in_forward, cfg.f_size, cfg.f_size)


def normalize_filters(f: Tensor, eps: float = L1_EPS) -> Tensor:
    """Scale every (sample, out, in) spatial slice to L1 norm 1/2."""
    f = as_tensor(f)
    l1 = tabs(f).sum(axis=(-2, -1), keepdims=True)
    return div(f, l1, eps=eps) * 0.5


def apply_filters(I: Tensor, filters: Tensor, pad_mode: str = "same-reflect") -> Tensor:
    """Convolve each sample of ``I`` with its own filter bank.

    The batch is folded into channels and convolved with ``groups=N``.
    """
    I = as_tensor(I)
    filters = as_tensor(filters, like=I)
    n, ci, h, w = I.shape
    if filters.ndim != 5 or filters.shape[0] != n or filters.shape[2] != ci:
        raise ShapeError(f"filter banks {filters.shape} do not fit forward input {I.shape}")
    co, k = filters.shape[1], filters.shape[3]
    grouped = I.reshape(1, n * ci, h, w)
    banks = filters.reshape(n * co, ci, k, filters.shape[4])
    out = ops.conv2d(grouped, banks, groups=n, pad_mode=pad_mode)
    return out.reshape(n, co, out.shape[2], out.shape[3])


def hyperconv_forward(params: HyperConvParams, cfg: HyperConvConfig, I: Tensor, F: Tensor,
                      pad_mode: str = "same-reflect") -> Tensor:
    """Apply a HyperConvolution to forward input ``I`` with filters predicted from ``F``.

    Args:
        params: Layer parameters (arrays or taped tensors).
        cfg: Layer configuration.
        I: Forward input (N, C_I, H, W).
        F: Filter input (N, C_F, H_F, W_F); spatial size may differ from ``I``.
        pad_mode: Padding of the forward convolution.

    Returns:
        Tensor of shape (N, C_O, H, W).
    """
    I = as_tensor(I)
    F = as_tensor(F, like=I)
    if I.ndim != 4 or I.shape[1] != cfg.n_in_forward:
        raise ShapeError(f"forward input {I.shape} does not have {cfg.n_in_forward} channels")
    if F.shape[0] != I.shape[0]:
        raise ShapeError(f"batch of filter input {F.shape} differs from forward input {I.shape}")
    n = I.shape[0]
    pooled = pool_features(cfg, F)
    raw = _mlp(params, cfg, pooled).reshape(n, cfg.n_out, cfg.n_in_forward, cfg.f_size, cfg.f_size)
    filters = normalize_filters(raw) + as_tensor(params.const_filter, like=I)
    out = apply_filters(I, filters, pad_mode)
    if cfg.use_bias:
        b = clamp(params.bias_head(pooled), -0.1, 0.1)
        out = out + b.reshape(n, cfg.n_out, 1, 1)
    if cfg.use_gain:
        g = clamp(params.gain_head(pooled), -0.9, 0.1) + 1.0
        out = out * g.reshape(n, cfg.n_out, 1, 1)
    return out


def embed_forward(params: EmbedParams, I: Tensor) -> Tensor:
    """Three stride-2 zero-padded 3x3 convolutions with rectifiers between them."""
    x = as_tensor(I)
    for i, conv in enumerate(params.convs):
        x = ops.conv2d(x, conv.weight, pad_mode="same-zero", stride=2, bias=conv.bias)
        if i < 2:
            x = ops.relu(x)
    return x


def hyperconv_embed_forward(params: HyperConvEmbedParams, cfg: HyperConvConfig, I: Tensor,
                            pad_mode: str = "same-reflect") -> Tensor:
    """HyperConvolution whose filter input is an internal embedding of ``I``."""
    if cfg.n_in_hyper != EMBED_BASE * 4:
        raise ValueError(f"embed variant needs n_in_hyper={EMBED_BASE * 4}, got {cfg.n_in_hyper}")
    I = as_tensor(I)
    return hyperconv_forward(params.hyper, cfg, I, embed_forward(params.embed, I), pad_mode)
