"""Analytic FLOP, parameter and activation-memory accounting.

Conventions: one multiply-accumulate is 2 FLOPs; pooling, activations and
upsampling cost 1 FLOP per output element; global pooling inside a
HyperConvolution costs one op per pooled input element; reshapes and
elementwise residual arithmetic are free. Peak activation memory is the
largest (input + output + filter) footprint of any convolution at 4 bytes
per element. All counts are per sample.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .hyper import HyperConvConfig

__all__ = [
    "LayerCost",
    "CostReport",
    "CostError",
    "count_conv",
    "count_affine",
    "count_hyperconv",
    "count_network",
    "ratio",
    "Conv",
    "HyperConv",
    "Pool",
    "Act",
    "Upsample",
    "Merge",
    "ArchDescription",
    "BYTES_PER_ELEMENT",
]

BYTES_PER_ELEMENT = 4


class CostError(ValueError):
    """Invalid extents or a network that cannot be shaped."""


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    flops: int
    params: int
    activation_bytes: int = 0
    mlp_flops: int = 0
    mlp_params: int = 0


@dataclass
class CostReport:
    per_layer: list[LayerCost] = field(default_factory=list)

    @property
    def flops(self) -> int:
        return sum(layer.flops for layer in self.per_layer)

    @property
    def params(self) -> int:
        return sum(layer.params for layer in self.per_layer)

    @property
    def peak_activation_bytes(self) -> int:
        return max((layer.activation_bytes for layer in self.per_layer), default=0)

    @property
    def mlp_flops(self) -> int:
        return sum(layer.mlp_flops for layer in self.per_layer)

    @property
    def mlp_params(self) -> int:
        return sum(layer.mlp_params for layer in self.per_layer)

    def add(self, layer: LayerCost) -> None:
        self.per_layer.append(layer)

    def extend(self, other: CostReport) -> None:
        self.per_layer.extend(other.per_layer)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["layer", "kind", "flops", "params", "activation_bytes"])
        for layer in self.per_layer:
            writer.writerow([layer.name, layer.kind, layer.flops, layer.params, layer.activation_bytes])
        writer.writerow(["TOTAL", "", self.flops, self.params, self.peak_activation_bytes])
        return buf.getvalue()

    def to_table(self) -> str:
        rows = [(layer.name, layer.kind, f"{layer.flops:,}", f"{layer.params:,}",
                 f"{layer.activation_bytes:,}") for layer in self.per_layer]
        rows.append(("TOTAL", "", f"{self.flops:,}", f"{self.params:,}", f"{self.peak_activation_bytes:,}"))
        header = ("layer", "kind", "flops", "params", "act_bytes(peak)")
        widths = [max(len(r[i]) for r in rows + [header]) for i in range(5)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        for r in rows:
            lines.append("  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))))
        lines.append(f"flops={self.flops:.4e}  params={self.params:,}  "
                     f"peak_activation={self.peak_activation_bytes / 2**30:.2f} GiB")
        return "\n".join(lines)


def _positive(**kw) -> None:
    for k, v in kw.items():
        if int(v) != v or v < 1:
            raise CostError(f"{k} must be a positive integer, got {v}")


def count_conv(c_in: int, c_out: int, f_h: int, f_w: int, h: int, w: int,
               bias: bool = False) -> tuple[int, int]:
    """(flops, params) of a standard convolution producing an ``h x w`` output."""
    _positive(c_in=c_in, c_out=c_out, f_h=f_h, f_w=f_w, h=h, w=w)
    weights = c_in * c_out * f_h * f_w
    return 2 * weights * h * w, weights + (c_out if bias else 0)


def count_affine(n_in: int, n_out: int, bias: bool = True) -> tuple[int, int]:
    _positive(n_in=n_in, n_out=n_out)
    return 2 * n_in * n_out, n_in * n_out + (n_out if bias else 0)


def count_hyperconv(cfg: HyperConvConfig, h: int, w: int, h_f: int | None = None,
                    w_f: int | None = None, name: str = "hyperconv") -> CostReport:
    """Cost of one HyperConvolution on an ``h x w`` forward input.

    ``h_f, w_f`` are the filter-input extents (default: same as the forward input).
    """
    h_f = h if h_f is None else h_f
    w_f = w if w_f is None else w_f
    _positive(h=h, w=w, h_f=h_f, w_f=w_f, n_hid=cfg.n_hid)
    k, ci, co = cfg.f_size, cfg.n_in_forward, cfg.n_out
    conv_flops, filt = count_conv(ci, co, k, k, h, w)
    mlp_flops = mlp_params = 0
    for n_in, n_out in cfg.mlp_dims:
        f, p = count_affine(n_in, n_out)
        mlp_flops += f
        mlp_params += p
    head_flops = head_params = 0
    for enabled in (cfg.use_bias, cfg.use_gain):
        if enabled:
            f, p = count_affine(cfg.n_in_hyper, co)
            head_flops += f
            head_params += p
    pool_flops = cfg.n_in_hyper * h_f * w_f
    act_bytes = (ci * h * w + co * h * w + filt) * BYTES_PER_ELEMENT
    layer = LayerCost(name, "hyperconv", conv_flops + mlp_flops + head_flops + pool_flops,
                      filt + mlp_params + head_params, act_bytes, mlp_flops, mlp_params)
    return CostReport([layer])


def ratio(report: CostReport) -> float:
    """FLOPs per learnable parameter."""
    if report.params == 0:
        raise CostError("ratio: report has no parameters")
    return report.flops / report.params


# ---------------------------------------------------------------------------
# architecture descriptions


@dataclass(frozen=True)
class Conv:
    """Standard convolution; ``pad=True`` keeps the extent at stride 1."""

    name: str
    src: str
    dst: str
    c_in: int
    c_out: int
    k: int = 3
    stride: int = 1
    bias: bool = True
    pad: bool = True


@dataclass(frozen=True)
class HyperConv:
    name: str
    fwd: str
    hyper: str
    dst: str
    cfg: HyperConvConfig


@dataclass(frozen=True)
class Pool:
    """Non-overlapping max pooling, floor-sized."""

    name: str
    src: str
    dst: str
    k: int


@dataclass(frozen=True)
class Act:
    name: str
    src: str
    dst: str
    fn: str = "gelu"


@dataclass(frozen=True)
class Upsample:
    """2x bilinear upsampling, optionally resized to the extent of ``like``."""

    name: str
    src: str
    dst: str
    like: str | None = None


@dataclass(frozen=True)
class Merge:
    """Free elementwise combination (residual adds, channel means); output takes ``srcs[0]``'s shape."""

    name: str
    srcs: tuple[str, ...]
    dst: str
    channels: int | None = None


@dataclass
class ArchDescription:
    """A network as named tensors and the layers that connect them.

    Attributes:
        name: Label for reports.
        input: Name of the input tensor.
        output: Name of the output tensor.
        layers: Layers in execution order.
    """

    name: str
    input: str
    output: str
    layers: list = field(default_factory=list)


def _conv_out(n: int, k: int, stride: int, pad: bool) -> int:
    p = k // 2 if pad else 0
    return (n + 2 * p - k) // stride + 1


def count_network(arch: ArchDescription | None, input_shape: tuple[int, int, int]) -> CostReport:
    """Walk ``arch`` with an input of shape (C, H, W) and tally every layer."""
    report = CostReport()
    if arch is None or not arch.layers:
        return report
    c, h, w = input_shape
    _positive(c=c, h=h, w=w)
    shapes: dict[str, tuple[int, int, int]] = {arch.input: (c, h, w)}

    def get(layer, key):
        if key not in shapes:
            raise CostError(f"layer {layer.name!r}: unknown input tensor {key!r}")
        return shapes[key]

    for layer in arch.layers:
        try:
            if isinstance(layer, Conv):
                ci, hi, wi = get(layer, layer.src)
                if ci != layer.c_in:
                    raise CostError(f"expects {layer.c_in} channels, got {ci}")
                ho, wo = _conv_out(hi, layer.k, layer.stride, layer.pad), _conv_out(wi, layer.k, layer.stride, layer.pad)
                flops, params = count_conv(layer.c_in, layer.c_out, layer.k, layer.k, ho, wo, layer.bias)
                act = (ci * hi * wi + layer.c_out * ho * wo + layer.c_in * layer.c_out * layer.k ** 2)
                report.add(LayerCost(layer.name, "conv", flops, params, act * BYTES_PER_ELEMENT))
                shapes[layer.dst] = (layer.c_out, ho, wo)
            elif isinstance(layer, HyperConv):
                ci, hi, wi = get(layer, layer.fwd)
                cf, hf, wf = get(layer, layer.hyper)
                if ci != layer.cfg.n_in_forward or cf != layer.cfg.n_in_hyper:
                    raise CostError(f"expects ({layer.cfg.n_in_forward}, {layer.cfg.n_in_hyper}) "
                                    f"channels, got ({ci}, {cf})")
                report.extend(count_hyperconv(layer.cfg, hi, wi, hf, wf, name=layer.name))
                shapes[layer.dst] = (layer.cfg.n_out, hi, wi)
            elif isinstance(layer, Pool):
                ci, hi, wi = get(layer, layer.src)
                ho, wo = hi // layer.k, wi // layer.k
                report.add(LayerCost(layer.name, "pool", ci * ho * wo, 0))
                shapes[layer.dst] = (ci, ho, wo)
            elif isinstance(layer, Act):
                ci, hi, wi = get(layer, layer.src)
                report.add(LayerCost(layer.name, "act", ci * hi * wi, 0))
                shapes[layer.dst] = (ci, hi, wi)
            elif isinstance(layer, Upsample):
                ci, hi, wi = get(layer, layer.src)
                ho, wo = (2 * hi, 2 * wi) if layer.like is None else get(layer, layer.like)[1:]
                report.add(LayerCost(layer.name, "upsample", ci * ho * wo, 0))
                shapes[layer.dst] = (ci, ho, wo)
            elif isinstance(layer, Merge):
                ci, hi, wi = get(layer, layer.srcs[0])
                for s in layer.srcs[1:]:
                    get(layer, s)
                shapes[layer.dst] = (ci if layer.channels is None else layer.channels, hi, wi)
            else:
                raise CostError(f"unsupported layer type {type(layer).__name__}")
            out = shapes.get(getattr(layer, "dst", None))
            if out is not None and min(out) < 1:
                raise CostError(f"empty output {out}")
        except CostError as exc:
            if str(exc).startswith("layer "):
                raise
            raise CostError(f"layer {layer.name!r} ({arch.name}): {exc}") from None
    if arch.output not in shapes:
        raise CostError(f"{arch.name}: output tensor {arch.output!r} never produced")
    return report
