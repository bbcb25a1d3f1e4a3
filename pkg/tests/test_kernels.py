"""Numba fast path against the pure-numpy fallback."""

import numpy as np
import numpy.testing as npt
import pytest

from lamarl import _kernels as k

needs_numba = pytest.mark.skipif(not k.HAS_NUMBA, reason="numba not installed")

RNG = np.random.default_rng(3)


@needs_numba
def test_sigmoid_backends_agree():
    x = RNG.normal(size=(17, 9))
    npt.assert_allclose(k.nb_sigmoid(x), k.np_sigmoid(x), rtol=1e-14)


@needs_numba
def test_gumbel_backends_agree():
    u = np.clip(RNG.random(size=(500,)), 1e-12, 1 - 1e-12)
    npt.assert_allclose(k.nb_gumbel_from_uniform(u), k.np_gumbel_from_uniform(u),
                        rtol=1e-13)


@needs_numba
def test_adam_backends_agree():
    p1 = RNG.normal(size=64)
    p2 = p1.copy()
    m1, v1 = np.zeros(64), np.zeros(64)
    m2, v2 = np.zeros(64), np.zeros(64)
    for t in range(1, 6):
        g = RNG.normal(size=64)
        k.nb_adam_update(p1, g, m1, v1, t, 0.01, 0.9, 0.999, 1e-8)
        k.np_adam_update(p2, g.copy(), m2, v2, t, 0.01, 0.9, 0.999, 1e-8)
    npt.assert_allclose(p1, p2, rtol=1e-13)


@needs_numba
def test_polyak_backends_agree():
    t1 = RNG.normal(size=32)
    t2 = t1.copy()
    online = RNG.normal(size=32)
    k.nb_polyak(t1, online, 0.01)
    k.np_polyak(t2, online, 0.01)
    npt.assert_allclose(t1, t2, rtol=1e-15)


@needs_numba
def test_mlp2_backends_agree():
    x = RNG.normal(size=6)
    w0, b0 = RNG.normal(size=(6, 8)), RNG.normal(size=8)
    w1, b1 = RNG.normal(size=(8, 8)), RNG.normal(size=8)
    w2, b2 = RNG.normal(size=(8, 2)), RNG.normal(size=2)
    npt.assert_allclose(k.nb_mlp2_silu(x.copy(), w0, b0, w1, b1, w2, b2),
                        k.np_mlp2_silu(x, w0, b0, w1, b1, w2, b2), rtol=1e-12)


@needs_numba
def test_softmax1d_backends_agree():
    z = RNG.normal(size=7) * 10
    npt.assert_allclose(k.nb_softmax1d(z), k.np_softmax1d(z), rtol=1e-13)


def test_backend_selection_reports():
    assert k.backend_name() in ("numba", "numpy")
