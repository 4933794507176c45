"""Compiled and pure-Python im2col/col2im backends agree bit for bit."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperconv_kit import _kernels
from hyperconv_kit._kernels import _pykernels

BACKENDS = _kernels.backends()
needs_compiled = pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")


def test_active_backend_reported():
    assert _kernels.BACKEND in BACKENDS


def test_env_forces_fallback():
    code = "from hyperconv_kit import _kernels; print(_kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                         env={**os.environ, "HCKIT_PURE_PYTHON": "1"})
    assert out.stdout.strip() == "python"


def test_python_col2im_is_adjoint_of_im2col(rng):
    x = rng.standard_normal((2, 3, 7, 8))
    cols = _pykernels.im2col(x, 3, 2, 2, 1)
    c = rng.standard_normal(cols.shape)
    lhs = np.sum(cols * c)
    rhs = np.sum(x * _pykernels.col2im(c, 7, 8, 2, 1))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 3), c=st.integers(1, 4), h=st.integers(1, 12), w=st.integers(1, 12),
       kh=st.integers(1, 4), kw=st.integers(1, 4), sh=st.integers(1, 3), sw=st.integers(1, 3),
       dtype=st.sampled_from([np.float32, np.float64]))
def test_backends_bit_identical(n, c, h, w, kh, kw, sh, sw, dtype):
    if kh > h or kw > w:
        return
    rng = np.random.default_rng(h * 100 + w)
    x = rng.standard_normal((n, c, h, w)).astype(dtype)
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    a, b = py.im2col(x, kh, kw, sh, sw), cy.im2col(x, kh, kw, sh, sw)
    assert a.dtype == b.dtype and a.shape == b.shape
    np.testing.assert_array_equal(a, b)
    g = rng.standard_normal(a.shape).astype(dtype)
    np.testing.assert_array_equal(py.col2im(g, h, w, sh, sw), cy.col2im(g, h, w, sh, sw))


@needs_compiled
def test_compiled_accepts_read_only_input(rng):
    x = rng.standard_normal((1, 1, 5, 5))
    x.setflags(write=False)
    np.testing.assert_array_equal(BACKENDS["cython"].im2col(x, 3, 3, 1, 1), _pykernels.im2col(x, 3, 3, 1, 1))
