import numpy as np
import pytest

from strokeunc import _kernels as K

needs_numba = pytest.mark.skipif(not K.HAS_NUMBA, reason="numba not installed")
BACKENDS = ["numpy", pytest.param("numba", marks=needs_numba)]


def _random_block(rng, n, T):
    p = rng.random((n, T))
    # sprinkle exact boundary values
    p[rng.random((n, T)) < 0.05] = 0.0
    p[rng.random((n, T)) < 0.05] = 1.0
    p[rng.random((n, T)) < 0.05] = 0.5
    return p


@needs_numba
@pytest.mark.parametrize("T", [1, 2, 10, 500])
def test_summaries_backends_agree(T):
    p = _random_block(np.random.default_rng(T), 40, T)
    with K.use_backend("numpy"):
        a = K.image_summaries(p)
    with K.use_backend("numba"):
        b = K.image_summaries(p)
    for x, y in zip(a[:-1], b[:-1]):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-13)
    np.testing.assert_array_equal(a[-1], b[-1])


@pytest.mark.parametrize("backend", BACKENDS)
def test_constant_rows_are_exactly_certain(backend):
    p = np.repeat(np.array([[0.3], [0.7], [0.123456789], [1.0]]), 37, axis=1)
    with K.use_backend(backend):
        mean0, mean1, var, vr, pe, mi, alea, hist = K.image_summaries(p)
    np.testing.assert_array_equal(mean1, p[:, 0])
    np.testing.assert_array_equal(var, 0.0)
    np.testing.assert_array_equal(vr, 0.0)
    np.testing.assert_array_equal(mi, 0.0)


@needs_numba
@pytest.mark.parametrize("shape", [(1, 3, 1, 1, 3), (4, 9, 3, 5, 3), (2, 46, 8, 16, 3)])
def test_conv_backends_agree(shape):
    B, L, C, F, k = shape
    rng = np.random.default_rng(sum(shape))
    x = rng.standard_normal((B, L, C))
    W = rng.standard_normal((k, C, F))
    b = rng.standard_normal(F)
    g = rng.standard_normal((B, L - k + 1, F))
    with K.use_backend("numpy"):
        y0 = K.conv1d_forward(x, W, b)
        d0 = K.conv1d_backward(x, W, g)
    with K.use_backend("numba"):
        y1 = K.conv1d_forward(x, W, b)
        d1 = K.conv1d_backward(x, W, g)
    np.testing.assert_allclose(y0, y1, rtol=1e-12, atol=1e-12)
    for u, v in zip(d0, d1):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-12)


def test_conv_forward_matches_direct_sum():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 6, 3))
    W = rng.standard_normal((3, 3, 4))
    b = rng.standard_normal(4)
    y = K.conv1d_forward(x, W, b)
    ref = np.empty((2, 4, 4))
    for n in range(2):
        for i in range(4):
            ref[n, i] = b + np.einsum("jc,jcf->f", x[n, i : i + 3], W)
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_backend_switching():
    before = K.get_backend()
    with K.use_backend("numpy"):
        assert K.get_backend() == "numpy"
    assert K.get_backend() == before
    with pytest.raises(ValueError):
        K.set_backend("fortran")


def test_rejects_bad_shape():
    with pytest.raises(ValueError):
        K.image_summaries(np.zeros(5))
