"""The compiled kernels and the NumPy fallback must agree."""

import numpy as np
import pytest

from adaptkv import _backend, _kernels_py

backends = _backend.available_backends()
needs_compiled = pytest.mark.skipif("compiled" not in backends, reason="compiled extension not built")


def rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


def test_fallback_is_always_available():
    assert backends["python"] is _kernels_py
    assert _backend.BACKEND in backends


@needs_compiled
@pytest.mark.parametrize("shape", [(1, 1), (5, 3), (32, 8), (7, 7)])
def test_qr_agrees(shape):
    a = rand(shape, sum(shape))
    got = backends["compiled"].householder_qr(a)
    ref = _kernels_py.householder_qr(a)
    np.testing.assert_allclose(got[0], ref[0], atol=1e-13)
    np.testing.assert_allclose(got[1], ref[1], atol=1e-13)
    assert got[2] == pytest.approx(ref[2], rel=1e-12)


@needs_compiled
@pytest.mark.parametrize("n", [1, 2, 6, 16])
def test_jacobi_agrees(n):
    a = np.triu(rand((n, n), n))
    w1, v1, s1 = backends["compiled"].jacobi_svd_square(a, 100, 1e-12)
    w2, v2, s2 = _kernels_py.jacobi_svd_square(a, 100, 1e-12)
    assert s1 >= 0 and s2 >= 0
    np.testing.assert_allclose(w1, w2, atol=1e-12)
    np.testing.assert_allclose(v1, v2, atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("offset", [None, 0, 3])
def test_softmax_agrees(offset):
    logits = rand((4, 8), 11)
    w1, b1 = backends["compiled"].masked_softmax_rows(logits, 0.3, offset)
    w2, b2 = _kernels_py.masked_softmax_rows(logits, 0.3, offset)
    assert b1 == b2 == -1
    np.testing.assert_allclose(w1, w2, rtol=1e-14, atol=0)


@needs_compiled
def test_softmax_reports_the_same_bad_row():
    logits = np.zeros((3, 3))
    assert backends["compiled"].masked_softmax_rows(logits, 1.0, -1)[1] == 0
    assert _kernels_py.masked_softmax_rows(logits, 1.0, -1)[1] == 0


@pytest.mark.parametrize("name", sorted(backends))
def test_projection_is_row_stable(name):
    k = backends[name]
    x, u = rand((40, 16), 1), rand((16, 5), 2)
    full = k.project_rows(x, u)
    rows = np.array([3, 4, 17, 39])
    np.testing.assert_array_equal(k.project_rows(x[rows], u), full[rows])


@needs_compiled
def test_projection_is_bit_identical_across_backends():
    x, u = rand((25, 9), 3), rand((9, 4), 4)
    np.testing.assert_array_equal(backends["compiled"].project_rows(x, u), _kernels_py.project_rows(x, u))
