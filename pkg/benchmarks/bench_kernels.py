"""Compare the compiled and pure-Python im2col/col2im backends.

Run with ``python3 benchmarks/bench_kernels.py``. Prints median wall time
per call for each kernel and backend, and for a full
conv2d forward+backward pass, plus the speedup.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from hyperconv_kit import _kernels, image_ops
from hyperconv_kit.tensor import Tape, backward


def _median_time(fn, repeat: int) -> float:
    return float(np.median(timeit.repeat(fn, number=1, repeat=repeat)))


def bench(shape=(8, 16, 114, 114), k=3, stride=1, repeat=7) -> list[tuple[str, str, float]]:
    rng = np.random.default_rng(0)
    xp = rng.standard_normal(shape).astype(np.float32)
    rows = []
    for name, mod in _kernels.backends().items():
        cols = mod.im2col(xp, k, k, stride, stride)
        rows.append((name, "im2col", _median_time(lambda: mod.im2col(xp, k, k, stride, stride), repeat)))
        rows.append((name, "col2im", _median_time(
            lambda: mod.col2im(cols, shape[2], shape[3], stride, stride), repeat)))
        rows.append((name, "conv2d", _median_time(lambda: _conv_fwd_bwd(mod, xp, k, stride), repeat)))
    return rows


def _conv_fwd_bwd(mod, xp: np.ndarray, k: int, stride: int) -> None:
    """Forward and backward of a same-zero conv with the given backend active."""
    saved = _kernels._impl
    _kernels._impl = mod
    try:
        c = xp.shape[1]
        tape = Tape()
        x = tape.leaf(xp)
        w = tape.leaf(np.full((c, c, k, k), 0.01, dtype=xp.dtype))
        y = image_ops.conv2d(x, w, pad_mode="same-zero", stride=stride)
        backward(tape, (y * y).sum())
    finally:
        _kernels._impl = saved


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shape", type=int, nargs=4, default=(8, 16, 114, 114), metavar=("N", "C", "H", "W"))
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--stride", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()
    rows = bench(tuple(args.shape), args.k, args.stride, args.repeat)
    times = {(b, op): t for b, op, t in rows}
    print(f"shape={tuple(args.shape)} k={args.k} stride={args.stride} (active backend: {_kernels.BACKEND})")
    for b, op, t in rows:
        print(f"{b:7s} {op:7s} {t * 1e3:9.3f} ms")
    if "cython" in {b for b, _, _ in rows}:
        for op in ("im2col", "col2im", "conv2d"):
            print(f"speedup {op}: {times[('python', op)] / times[('cython', op)]:.2f}x")


if __name__ == "__main__":
    main()
