"""Convolution, pooling, padding, resampling and activations on NCHW tensors.

All functions are differentiable through the tape of their inputs.
Convolution is cross-correlation (no kernel flip).
"""

from __future__ import annotations

import enum
import math

import numpy as np
from scipy.special import erf

from . import _kernels
from .tensor import ShapeError, Tensor, apply_op, as_tensor, clamp

__all__ = [
    "PaddingMode",
    "pad",
    "reflection_pad",
    "conv2d",
    "global_max_pool",
    "global_avg_pool",
    "max_pool2d",
    "avg_pool2x",
    "separable_linear",
    "upsample_bilinear_2x",
    "bilinear_matrix",
    "gelu",
    "relu",
    "leaky_relu",
    "sigmoid",
    "hard_sigmoid",
    "affine",
]


class PaddingMode(str, enum.Enum):
    VALID = "valid"
    SAME_ZERO = "same-zero"
    SAME_REFLECT = "same-reflect"
    SAME_PERIODIC = "same-periodic"


def _require_4d(name: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{name}: expected an NCHW tensor, got shape {x.shape}")


def _pad_index(n: int, before: int, after: int, mode: str) -> np.ndarray:
    idx = np.arange(-before, n + after)
    if mode == "reflect":
        if before >= n or after >= n:
            raise ShapeError(f"reflection pad of {max(before, after)} needs extent > pad, got {n}")
        period = 2 * (n - 1) if n > 1 else 1
        idx = np.abs(idx) % period
        idx = np.where(idx >= n, period - idx, idx)
    elif mode == "periodic":
        idx = idx % n
    return idx


def pad(x: Tensor, p: int | tuple[int, int, int, int], mode: str = "reflect") -> Tensor:
    """Pad the two spatial axes of an NCHW tensor.

    Args:
        x: Input tensor.
        p: Either one width for all sides or ``(top, bottom, left, right)``.
        mode: ``"zero"``, ``"reflect"`` (edge not repeated) or ``"periodic"``.
    """
    _require_4d("pad", x)
    top, bottom, left, right = (p, p, p, p) if isinstance(p, int) else p
    n, c, h, w = x.shape
    if min(top, bottom, left, right) < 0:
        raise ShapeError("pad: negative pad width")
    if mode == "zero":
        out = np.zeros((n, c, h + top + bottom, w + left + right), dtype=x.dtype)
        out[:, :, top:top + h, left:left + w] = x.data
        return apply_op(out, (x,), lambda g: (g[:, :, top:top + h, left:left + w],))
    if mode not in ("reflect", "periodic"):
        raise ValueError(f"pad: unknown mode {mode!r}")
    ri = _pad_index(h, top, bottom, mode)
    ci = _pad_index(w, left, right, mode)
    out = x.data[:, :, ri][:, :, :, ci]

    def vjp(g):
        # fold columns, then rows; only border positions need scattering
        gc = g[:, :, :, left:left + w].copy()
        for j in list(range(left)) + list(range(left + w, g.shape[3])):
            gc[:, :, :, ci[j]] += g[:, :, :, j]
        gx = gc[:, :, top:top + h].copy()
        for i in list(range(top)) + list(range(top + h, g.shape[2])):
            gx[:, :, ri[i]] += gc[:, :, i]
        return (gx,)

    return apply_op(out, (x,), vjp)


def reflection_pad(x: Tensor, p: int) -> Tensor:
    return pad(x, p, "reflect")


def conv2d(x: Tensor, filters: Tensor, groups: int = 1, pad_mode: str | PaddingMode = "valid",
           stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Grouped 2-D cross-correlation.

    Args:
        x: Input of shape (N, C_in, H, W).
        filters: Filter bank of shape (C_out, C_in // groups, f_H, f_W).
        groups: Number of independent channel groups.
        pad_mode: A :class:`PaddingMode` value. ``same-*`` pads ``f // 2`` on each side.
        stride: Spatial stride.
        bias: Optional per-output-channel bias of shape (C_out,).

    Returns:
        Output of shape (N, C_out, H_out, W_out).
    """
    x = as_tensor(x)
    filters = as_tensor(filters, like=x)
    _require_4d("conv2d", x)
    if filters.ndim != 4:
        raise ShapeError(f"conv2d: filters must be 4-d, got shape {filters.shape}")
    n, c_in, _, _ = x.shape
    c_out, c_in_g, kh, kw = filters.shape
    if groups < 1 or c_in % groups or c_out % groups:
        raise ShapeError(f"conv2d: channels in={c_in}, out={c_out} not divisible by groups={groups}")
    if c_in // groups != c_in_g:
        raise ShapeError(f"conv2d: input {x.shape} with groups={groups} does not match filters {filters.shape}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")

    mode = PaddingMode(pad_mode)
    if mode is not PaddingMode.VALID:
        pt, pl = kh // 2, kw // 2
        widths = (pt, kh - 1 - pt, pl, kw - 1 - pl)
        x = pad(x, widths, {PaddingMode.SAME_ZERO: "zero", PaddingMode.SAME_REFLECT: "reflect",
                            PaddingMode.SAME_PERIODIC: "periodic"}[mode])
    hp, wp = x.shape[2], x.shape[3]
    if kh > hp or kw > wp:
        raise ShapeError(f"conv2d: filter {kh}x{kw} larger than padded input {hp}x{wp}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    cog = c_out // groups
    k = c_in_g * kh * kw
    xd = x.data
    cols = _kernels.im2col(xd, kh, kw, stride, stride).reshape(n, groups, k, ho * wo)
    wmat = filters.data.reshape(groups, cog, k)
    out = np.matmul(wmat[None], cols).reshape(n, c_out, ho, wo)

    def vjp(g):
        g = np.ascontiguousarray(g).reshape(n, groups, cog, ho * wo)
        gw = np.matmul(g, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(filters.shape)
        gcols = np.matmul(wmat.transpose(0, 2, 1)[None], g)
        gx = _kernels.col2im(gcols.reshape(n, c_in, kh, kw, ho, wo), hp, wp, stride, stride)
        return gx, gw

    y = apply_op(out, (x, filters), vjp)
    if bias is not None:
        y = y + as_tensor(bias, like=y).reshape(1, c_out, 1, 1)
    return y


def global_max_pool(x: Tensor) -> Tensor:
    """Per-sample, per-channel spatial maximum, shape (N, C, 1, 1)."""
    _require_4d("global_max_pool", x)
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    arg = flat.argmax(axis=2)
    out = np.take_along_axis(flat, arg[:, :, None], axis=2).reshape(n, c, 1, 1)

    def vjp(g):
        gx = np.zeros((n, c, h * w), dtype=g.dtype)
        np.put_along_axis(gx, arg[:, :, None], g.reshape(n, c, 1), axis=2)
        return (gx.reshape(x.shape),)

    return apply_op(out, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-sample, per-channel spatial mean, shape (N, C, 1, 1)."""
    _require_4d("global_avg_pool", x)
    return x.mean(axis=(2, 3), keepdims=True)


def max_pool2d(x: Tensor, k: int, s: int | None = None) -> Tensor:
    """Max pooling with window ``k`` and stride ``s`` (defaults to ``k``), floor-sized output."""
    _require_4d("max_pool2d", x)
    s = k if s is None else s
    n, c, h, w = x.shape
    if k > h or k > w:
        raise ShapeError(f"max_pool2d: window {k} larger than input {h}x{w}")
    cols = _kernels.im2col(x.data, k, k, s, s)
    ho, wo = cols.shape[4], cols.shape[5]
    cols = cols.reshape(n, c, k * k, ho, wo)
    arg = cols.argmax(axis=2)[:, :, None]
    out = np.take_along_axis(cols, arg, axis=2)[:, :, 0]

    def vjp(g):
        gc = np.zeros(cols.shape, dtype=g.dtype)
        np.put_along_axis(gc, arg, g[:, :, None], axis=2)
        return (_kernels.col2im(gc.reshape(n, c, k, k, ho, wo), h, w, s, s),)

    return apply_op(out, (x,), vjp)


def separable_linear(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Apply fixed linear maps along H and W: ``rows @ x @ cols.T`` per channel."""
    _require_4d("separable_linear", x)
    rows = np.asarray(rows, dtype=x.dtype)
    cols = np.asarray(cols, dtype=x.dtype)
    if rows.shape[1] != x.shape[2] or cols.shape[1] != x.shape[3]:
        raise ShapeError(f"separable_linear: maps {rows.shape}, {cols.shape} do not fit input {x.shape}")
    out = np.matmul(np.matmul(rows, x.data), cols.T)
    return apply_op(out, (x,), lambda g: (np.matmul(np.matmul(rows.T, g), cols),))


def bilinear_matrix(n: int, m: int) -> np.ndarray:
    """Interpolation matrix (m, n) resampling n samples to m with corner alignment."""
    mat = np.zeros((m, n))
    if n == 1 or m == 1:
        mat[:, 0] = 1.0
        return mat
    src = np.arange(m) * (n - 1) / (m - 1)
    i0 = np.minimum(np.floor(src).astype(int), n - 2)
    frac = src - i0
    mat[np.arange(m), i0] = 1.0 - frac
    mat[np.arange(m), i0 + 1] += frac
    return mat


def upsample_bilinear_2x(x: Tensor, corner_aligned: bool = True) -> Tensor:
    """Bilinear 2x upsampling (corner-aligned sampling grid)."""
    _require_4d("upsample_bilinear_2x", x)
    if not corner_aligned:
        raise NotImplementedError("only corner-aligned bilinear upsampling is provided")
    h, w = x.shape[2], x.shape[3]
    return separable_linear(x, bilinear_matrix(h, 2 * h), bilinear_matrix(w, 2 * w))


def _avg_matrix(n: int) -> np.ndarray:
    m = n // 2
    mat = np.zeros((m, n))
    mat[np.arange(m), 2 * np.arange(m)] = 0.5
    mat[np.arange(m), 2 * np.arange(m) + 1] = 0.5
    return mat


def avg_pool2x(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 (odd trailing row/column dropped)."""
    _require_4d("avg_pool2x", x)
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise ShapeError(f"avg_pool2x: input {x.shape} too small")
    return separable_linear(x, _avg_matrix(x.shape[2]), _avg_matrix(x.shape[3]))


# ---------------------------------------------------------------------------
# activations

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return apply_op(out.astype(x.dtype), (x,), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return apply_op(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return apply_op(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    return apply_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def hard_sigmoid(x: Tensor) -> Tensor:
    """``clamp(x, 0, 1)``."""
    return clamp(x, 0.0, 1.0)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Batched affine map ``x @ weight + bias`` for x of shape (N, in)."""
    y = x @ weight
    return y if bias is None else y + bias
