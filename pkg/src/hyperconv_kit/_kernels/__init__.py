"""Hot convolution kernels.

The compiled extension is used when it was built and importable; otherwise
the numpy implementation is selected. Setting ``HCKIT_PURE_PYTHON=1`` forces
the fallback. Both produce bit-identical results.
"""

import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("HCKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def im2col(xp: np.ndarray, kh: int, kw: int, sh: int = 1, sw: int = 1) -> np.ndarray:
    return _impl.im2col(np.ascontiguousarray(xp), kh, kw, sh, sw)


def col2im(cols: np.ndarray, hp: int, wp: int, sh: int = 1, sw: int = 1) -> np.ndarray:
    return _impl.col2im(np.ascontiguousarray(cols), hp, wp, sh, sw)


def backends() -> dict:
    """Available kernel modules keyed by name (for benchmarks and parity tests)."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
