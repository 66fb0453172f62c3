import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffpf import _kernels_py as py

try:
    from diffpf import _ckernels as cy
except ImportError:  # extension not built
    cy = None

needs_ext = pytest.mark.skipif(cy is None, reason="compiled kernels not built")

conv_geometry = st.tuples(
    st.integers(1, 2), st.integers(1, 3), st.integers(3, 9), st.integers(3, 9),
    st.integers(1, 3), st.integers(1, 3), st.integers(1, 2), st.integers(0, 1),
)


def _inputs(geom, seed, dtype):
    B, C, H, W, kh, kw, stride, pad = geom
    x = np.random.default_rng(seed).normal(size=(B, C, H, W)).astype(dtype)
    return x, kh, kw, stride, pad


@settings(max_examples=60, deadline=None)
@given(conv_geometry, st.integers(0, 1000))
def test_im2col_col2im_are_adjoint(geom, seed):
    x, kh, kw, stride, pad = _inputs(geom, seed, np.float64)
    cols = py.im2col(x, kh, kw, stride, pad)
    y = np.random.default_rng(seed + 1).normal(size=cols.shape)
    lhs = np.sum(cols * y)
    rhs = np.sum(x * py.col2im(y, x.shape, kh, kw, stride, pad))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_im2col_small_example():
    x = np.arange(9.0).reshape(1, 1, 3, 3)
    cols = py.im2col(x, 2, 2, 1, 0)
    assert np.array_equal(cols, [[0, 1, 3, 4], [1, 2, 4, 5], [3, 4, 6, 7], [4, 5, 7, 8]])


@needs_ext
@settings(max_examples=60, deadline=None)
@given(conv_geometry, st.integers(0, 1000), st.sampled_from([np.float32, np.float64]))
def test_backends_agree_on_im2col_and_col2im(geom, seed, dtype):
    x, kh, kw, stride, pad = _inputs(geom, seed, dtype)
    a = py.im2col(x, kh, kw, stride, pad)
    b = np.asarray(cy.im2col(x, kh, kw, stride, pad))
    assert np.array_equal(a, b)
    cols = np.ascontiguousarray(a * 1.5 + 0.25)
    ga = py.col2im(cols, x.shape, kh, kw, stride, pad)
    gb = np.asarray(cy.col2im(cols, x.shape, kh, kw, stride, pad))
    tol = 1e-5 if dtype == np.float32 else 1e-12
    assert np.allclose(ga, gb, rtol=tol, atol=tol)


@needs_ext
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.sampled_from([8, 16, 33]), st.floats(0.5, 4.0),
       st.integers(0, 1000))
def test_backends_agree_on_splat(B, N, size, bw, seed):
    pts = np.random.default_rng(seed).uniform(-5, size + 5, size=(B, N, 2))
    a = py.splat(pts, size, bw)
    b = np.asarray(cy.splat(pts, size, bw))
    assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


@needs_ext
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 8), st.sampled_from([(32, 4.0), (64, 2.0), (128, 1.0)]), st.integers(0, 1000))
def test_backends_agree_on_render(M, geom, seed):
    size, scale = geom
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-70, 70, size=(M, 2))
    radii = rng.uniform(1, 12, size=M)
    colors = rng.random((M, 3))
    a = py.render_disks(np.zeros((3, size, size)), centers, radii, colors, scale, 64.0)
    b = np.asarray(cy.render_disks(np.zeros((3, size, size)), centers, radii, colors, scale, 64.0))
    assert np.array_equal(a, b)


def test_backend_switch_round_trips():
    from diffpf import kernels

    prev = kernels.use_backend("python")
    try:
        assert kernels.BACKEND == "python"
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")
    finally:
        kernels.use_backend(prev)
