"""HyperUNet and its standard-convolution ablation.

Four embedding networks (scales 1, 1/2, 1/4, 1/8) feed eleven
HyperConvolutions arranged as a U-Net over 4-channel packed Bayer input.
The output is upsampled 2x, so a (N, 4, H, W) input yields (N, 3, 2H, 2W).
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from . import cost
from . import image_ops as ops
from .hyper import HyperConvConfig, HyperConvParams, hyperconv_forward
from .tensor import ShapeError, Tensor, as_tensor

__all__ = [
    "HyperUNetConfig",
    "UNet",
    "build_hyper_unet",
    "build_plain_unet",
    "describe_unet",
    "forward",
]


@dataclass(frozen=True)
class HyperUNetConfig:
    n_fwd: int = 8
    n_embed: int = 8
    n_hid: int = 64
    n_in: int = 4
    n_out: int = 3

    def __post_init__(self):
        for name in ("n_fwd", "n_embed", "n_hid", "n_in", "n_out"):
            if getattr(self, name) < 2:
                raise ValueError(f"HyperUNetConfig.{name} must be >= 2, got {getattr(self, name)}")
        if self.n_fwd % 2:
            raise ValueError(f"HyperUNetConfig.n_fwd must be even, got {self.n_fwd}")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("n_fwd", "n_embed", "n_hid", "n_in", "n_out")}


# Embedding chains: ("conv", c_in, c_out, stride) | ("pool", k) | ("gelu",)
def _embed_chains(cfg: HyperUNetConfig) -> dict[str, tuple[str, list[tuple]]]:
    eb, nf, half = cfg.n_embed, cfg.n_fwd, cfg.n_fwd // 2
    g = ("gelu",)
    return {
        "embed": ("x", [("conv", cfg.n_in, eb, 1), ("pool", 2), g,
                        ("conv", eb, eb * 2, 1), ("pool", 2), g,
                        ("conv", eb * 2, eb * 4, 1), ("pool", 2), g,
                        ("conv", eb * 4, eb * 8, 1), ("pool", 4), g,
                        ("conv", eb * 8, eb * 16, 1)]),
        "embed2": ("y0", [("conv", nf, eb, 2), ("pool", 2), g,
                          ("conv", eb, eb * 2, 1), ("pool", 2), g,
                          ("conv", eb * 2, eb * 4, 1), ("pool", 4), g,
                          ("conv", eb * 4, eb * 8, 1)]),
        "embed4": ("y4", [("conv", half, eb // 2, 1), ("pool", 2), g,
                          ("conv", eb // 2, eb * 2, 1), ("pool", 4), g,
                          ("conv", eb * 2, eb * 4, 1)]),
        "embed8": ("y8", [("conv", half, eb // 2, 1), ("pool", 4), g,
                          ("conv", eb // 2, eb * 2, 1)]),
    }


def _hyper_layers(cfg: HyperUNetConfig) -> dict[str, HyperConvConfig]:
    eb, nf, half, nh = cfg.n_embed, cfg.n_fwd, cfg.n_fwd // 2, cfg.n_hid

    def hc(ci, cf, co, n):
        return HyperConvConfig(ci, cf, co, f_size=3, n_hid=n, use_bias=True)

    return {
        "hc0": hc(cfg.n_in, eb * 16, nf, nh),
        "hc1": hc(nf, eb * 16, nf, nh),
        "hc2": hc(nf, eb * 16, nf, nh),
        "hc_out": hc(nf, eb * 16, cfg.n_out, nh),
        "hc1_2": hc(nf, eb * 8, half, max(nh // 2, 1)),
        "hc2_2": hc(half, eb * 8, nf, max(nh // 2, 1)),
        "hc1_4": hc(half, eb * 4, half, max(nh // 2, 1)),
        "hc2_4": hc(half, eb * 4, half, max(nh // 2, 1)),
        "hc1_8": hc(half, eb * 2, half, max(nh // 2, 1)),
        "hc2_8": hc(half, eb * 2, half, max(nh // 2, 1)),
        "hc1_16": hc(half, eb * 2, half, max(nh // 2, 1)),
    }


# filter input feeding each hyper layer
_FILTER_SOURCE = {"hc0": "e", "hc1": "e", "hc2": "e", "hc_out": "e", "hc1_2": "e2", "hc2_2": "e2",
                  "hc1_4": "e4", "hc2_4": "e4", "hc1_8": "e8", "hc2_8": "e8", "hc1_16": "e8"}
_EMBED_OUT = {"embed": "e", "embed2": "e2", "embed4": "e4", "embed8": "e8"}


class _Runner:
    """Executes primitives for one forward pass, optionally tallying their cost."""

    def __init__(self, params: Mapping, tally: cost.CostReport | None):
        self.params = params
        self.tally = tally

    def _p(self, key, like):
        return as_tensor(self.params[key], like=like)

    def conv(self, name, x, stride=1, pad_mode="same-zero"):
        w = self._p(f"{name}.weight", x)
        y = ops.conv2d(x, w, pad_mode=pad_mode, stride=stride, bias=self._p(f"{name}.bias", x))
        if self.tally is not None:
            co, ci, k, _ = w.shape
            flops, params = cost.count_conv(ci, co, k, k, y.shape[2], y.shape[3], bias=True)
            act = (int(np.prod(x.shape[1:])) + int(np.prod(y.shape[1:])) + w.size) * cost.BYTES_PER_ELEMENT
            self.tally.add(cost.LayerCost(name, "conv", flops, params, act))
        return y

    def hyperconv(self, name, cfg, x, f):
        p = HyperConvParams.from_flat(cfg, self.params, prefix=f"{name}.")
        p = p.map(lambda a: as_tensor(a, like=x))
        y = hyperconv_forward(p, cfg, x, f)
        if self.tally is not None:
            self.tally.extend(cost.count_hyperconv(cfg, x.shape[2], x.shape[3], f.shape[2], f.shape[3], name=name))
        return y

    def _elementwise(self, name, kind, y):
        if self.tally is not None:
            self.tally.add(cost.LayerCost(name, kind, int(np.prod(y.shape[1:])), 0))
        return y

    def pool(self, name, x, k):
        return self._elementwise(name, "pool", ops.max_pool2d(x, k))

    def act(self, name, x, fn):
        f = {"gelu": ops.gelu, "hard_sigmoid": ops.hard_sigmoid, "sigmoid": ops.sigmoid}[fn]
        return self._elementwise(name, "act", f(x))

    def up(self, name, x):
        return self._elementwise(name, "upsample", ops.upsample_bilinear_2x(x))


class UNet:
    """The U-Net of the HyperUNet family, with hyper or plain convolutions.

    Parameters live in ``self.params`` as a flat ``{name: ndarray}`` mapping;
    :meth:`apply` evaluates the network for any compatible mapping (arrays
    or taped tensors), so training can differentiate through it.
    """

    def __init__(self, cfg: HyperUNetConfig, hyper: bool = True, seed: int = 0, dtype=np.float32,
                 allocate: bool = True):
        self.cfg = cfg
        self.hyper = hyper
        self.dtype = np.dtype(dtype)
        self.layers = _hyper_layers(cfg)
        self.embeds = _embed_chains(cfg) if hyper else {}
        self.params = self.init_params(seed) if allocate else {}

    @property
    def kind(self) -> str:
        return "hyper" if self.hyper else "plain"

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        out: dict[str, np.ndarray] = {}
        for ename, (_, chain) in self.embeds.items():
            i = 0
            for op in chain:
                if op[0] == "conv":
                    out.update(self._init_conv(f"{ename}.conv{i}", op[1], op[2], rng))
                    i += 1
        for name, lcfg in self.layers.items():
            if self.hyper:
                out.update(HyperConvParams.init(lcfg, rng, self.dtype).flat(f"{name}."))
            else:
                out.update(self._init_conv(name, lcfg.n_in_forward, lcfg.n_out, rng))
        return out

    def _init_conv(self, name, ci, co, rng):
        w = rng.standard_normal((co, ci, 3, 3)) * np.sqrt(2.0 / (ci * 9))
        return {f"{name}.weight": w.astype(self.dtype), f"{name}.bias": np.zeros(co, self.dtype)}

    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def check_input(self, x) -> None:
        if x.ndim != 4 or x.shape[1] != self.cfg.n_in:
            raise ShapeError(f"UNet expects (N, {self.cfg.n_in}, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[2], x.shape[3]
        if h % 16 or w % 16 or min(h, w) < 32:
            raise ShapeError(f"UNet input extents must be multiples of 16 and >= 32, got {h}x{w}")

    def _embed(self, run: _Runner, name: str, x: Tensor) -> Tensor:
        _, chain = self.embeds[name]
        i = 0
        for j, op in enumerate(chain):
            if op[0] == "conv":
                x = run.conv(f"{name}.conv{i}", x, stride=op[3])
                i += 1
            elif op[0] == "pool":
                x = run.pool(f"{name}.pool{j}", x, op[1])
            else:
                x = run.act(f"{name}.gelu{j}", x, "gelu")
        return x

    def _layer(self, run: _Runner, name: str, x: Tensor, f: Tensor | None) -> Tensor:
        if self.hyper:
            return run.hyperconv(name, self.layers[name], x, f)
        return run.conv(name, x, pad_mode="same-reflect")

    def apply(self, params: Mapping, x, tally: cost.CostReport | None = None) -> Tensor:
        """Forward pass with explicit parameters.

        Args:
            params: Flat name-to-array (or tensor) mapping.
            x: Packed RAW input (N, n_in, H, W).
            tally: If given, receives the closed-form cost of each executed primitive.
        """
        x = as_tensor(x)
        if x.tape is None and x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        self.check_input(x)
        run = _Runner(params, tally)
        L = self._layer
        e = e2 = e4 = e8 = None
        if self.hyper:
            e = self._embed(run, "embed", x)

        y0 = run.act("act0", L(run, "hc0", x, e), "hard_sigmoid")
        y0 = run.act("act1", L(run, "hc1", y0, e) + y0, "hard_sigmoid")
        # scale 1/2
        y2 = run.pool("pool2", y0, 2)
        if self.hyper:
            e2 = self._embed(run, "embed2", y0)
        y2 = run.act("act1_2", L(run, "hc1_2", y2, e2), "gelu")
        # scale 1/4
        y4 = run.pool("pool4", y2, 2)
        if self.hyper:
            e4 = self._embed(run, "embed4", y4)
        y4 = run.act("act1_4", L(run, "hc1_4", y4, e4), "gelu")
        # scale 1/8
        y8 = run.pool("pool8", y4, 2)
        if self.hyper:
            e8 = self._embed(run, "embed8", y8)
        y8 = run.act("act1_8", L(run, "hc1_8", y8, e8), "gelu")
        # scale 1/16 reuses the 1/8 embedding
        y16 = run.pool("pool16", y8, 2)
        y16 = run.act("act1_16", L(run, "hc1_16", y16, e8), "gelu")
        # decoder
        y8 = run.act("act2_8", L(run, "hc2_8", y8 + run.up("up16", y16) * 0.25, e8) + y8, "gelu")
        y4 = run.act("act2_4", L(run, "hc2_4", y4 + run.up("up8", y8) * 0.25, e4) + y4, "gelu")
        y2 = run.act("act2_2", L(run, "hc2_2", y2 + run.up("up4", y4) * 0.25, e2)
                     + y2.mean(axis=1, keepdims=True), "gelu")
        y = run.act("act2", L(run, "hc2", y0 + run.up("up2", y2) * 0.25, e) + y0, "gelu")
        y = y + x.mean(axis=1, keepdims=True)
        y = run.up("up_out", y)
        y = L(run, "hc_out", y, e)
        return run.act("act_out", y, "sigmoid")

    def forward(self, x) -> Tensor:
        return self.apply(self.params, x)

    __call__ = forward

    def describe(self) -> cost.ArchDescription:
        """Layer graph for :func:`cost.count_network`."""
        C, HC, P, A, U, M = cost.Conv, cost.HyperConv, cost.Pool, cost.Act, cost.Upsample, cost.Merge
        layers: list = []

        def embed(name):
            src, chain = self.embeds[name]
            cur, i = src, 0
            for j, op in enumerate(chain):
                dst = f"{name}.t{j}"
                if op[0] == "conv":
                    layers.append(C(f"{name}.conv{i}", cur, dst, op[1], op[2], stride=op[3]))
                    i += 1
                elif op[0] == "pool":
                    layers.append(P(f"{name}.pool{j}", cur, dst, op[1]))
                else:
                    layers.append(A(f"{name}.gelu{j}", cur, dst))
                cur = dst
            layers.append(M(f"{name}.out", (cur,), _EMBED_OUT[name]))

        def layer(name, src, dst):
            lcfg = self.layers[name]
            if self.hyper:
                layers.append(HC(name, src, _FILTER_SOURCE[name], dst, lcfg))
            else:
                layers.append(C(name, src, dst, lcfg.n_in_forward, lcfg.n_out))

        if self.hyper:
            embed("embed")
        layer("hc0", "x", "h0")
        layers.append(A("act0", "h0", "y0a", "hard_sigmoid"))
        layer("hc1", "y0a", "h1")
        layers.append(M("res1", ("h1", "y0a"), "h1r"))
        layers.append(A("act1", "h1r", "y0", "hard_sigmoid"))
        layers.append(P("pool2", "y0", "p2", 2))
        if self.hyper:
            embed("embed2")
        layer("hc1_2", "p2", "h1_2")
        layers.append(A("act1_2", "h1_2", "y2a"))
        layers.append(P("pool4", "y2a", "y4", 2))
        if self.hyper:
            embed("embed4")
        layer("hc1_4", "y4", "h1_4")
        layers.append(A("act1_4", "h1_4", "y4a"))
        layers.append(P("pool8", "y4a", "y8", 2))
        if self.hyper:
            embed("embed8")
        layer("hc1_8", "y8", "h1_8")
        layers.append(A("act1_8", "h1_8", "y8a"))
        layers.append(P("pool16", "y8a", "p16", 2))
        layer("hc1_16", "p16", "h1_16")
        layers.append(A("act1_16", "h1_16", "y16a"))
        # decoder
        layers.append(U("up16", "y16a", "u16", like="y8a"))
        layers.append(M("skip8", ("y8a", "u16"), "s8"))
        layer("hc2_8", "s8", "h2_8")
        layers.append(M("res8", ("h2_8", "y8a"), "r8"))
        layers.append(A("act2_8", "r8", "y8b"))
        layers.append(U("up8", "y8b", "u8", like="y4a"))
        layers.append(M("skip4", ("y4a", "u8"), "s4"))
        layer("hc2_4", "s4", "h2_4")
        layers.append(M("res4", ("h2_4", "y4a"), "r4"))
        layers.append(A("act2_4", "r4", "y4b"))
        layers.append(U("up4", "y4b", "u4", like="y2a"))
        layers.append(M("skip2", ("y2a", "u4"), "s2"))
        layer("hc2_2", "s2", "h2_2")
        layers.append(M("res2", ("h2_2", "y2a"), "r2"))
        layers.append(A("act2_2", "r2", "y2b"))
        layers.append(U("up2", "y2b", "u2", like="y0"))
        layers.append(M("skip1", ("y0", "u2"), "s1"))
        layer("hc2", "s1", "h2")
        layers.append(M("res1b", ("h2", "y0"), "r1"))
        layers.append(A("act2", "r1", "y1"))
        layers.append(M("input_mean", ("y1", "x"), "y1m"))
        layers.append(U("up_out", "y1m", "yu"))
        layer("hc_out", "yu", "ho")
        layers.append(A("act_out", "ho", "out", "sigmoid"))
        name = f"{self.kind}-unet{self.cfg.to_dict()}"
        return cost.ArchDescription(name, "x", "out", layers)


def build_hyper_unet(cfg: HyperUNetConfig, seed: int = 0, dtype=np.float32) -> UNet:
    return UNet(cfg, hyper=True, seed=seed, dtype=dtype)


def build_plain_unet(n_fwd: int, n_in: int = 4, n_out: int = 3, seed: int = 0, dtype=np.float32) -> UNet:
    """Same topology with a learned 3x3 convolution in place of every HyperConvolution."""
    cfg = HyperUNetConfig(n_fwd=n_fwd, n_embed=2, n_hid=2, n_in=n_in, n_out=n_out)
    return UNet(cfg, hyper=False, seed=seed, dtype=dtype)


def describe_unet(cfg: HyperUNetConfig, hyper: bool = True) -> cost.ArchDescription:
    """Layer graph of a HyperUNet (or its plain ablation) without allocating parameters."""
    return UNet(cfg, hyper=hyper, allocate=False).describe()


def forward(model: UNet, raw) -> Tensor:
    """Map packed RAW (N, 4, H, W) to RGB (N, 3, 2H, 2W) in [0, 1]."""
    return model.forward(raw)
