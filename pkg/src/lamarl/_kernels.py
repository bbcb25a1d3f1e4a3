"""Hot numeric kernels, compiled with numba when available.

Backend selection: ``LAMARL_BACKEND=numpy`` forces the pure-numpy fallback;
anything else (or unset) uses the numba path when numba imports cleanly.
Both implementations keep the same operation order so results agree to
floating-point rounding; ``benchmarks/bench_backends.py`` times them side
by side.
"""

import math
import os

import numpy as np

_WANT_NUMBA = os.environ.get("LAMARL_BACKEND", "numba").lower() != "numpy"

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


USE_NUMBA = _WANT_NUMBA and HAS_NUMBA


# ---------------------------------------------------------------------------
# pure-numpy implementations
# ---------------------------------------------------------------------------

def np_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def np_adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """One fused Adam step, in place on flat float64 arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def np_polyak(target, online, tau):
    """target <- tau * online + (1 - tau) * target, in place."""
    target *= 1.0 - tau
    target += tau * online


def np_gumbel_from_uniform(u):
    return -np.log(-np.log(u))


def np_mlp2_silu(x, w0, b0, w1, b1, w2, b2):
    """Pre-head forward of a 2-hidden-layer SiLU MLP for a single sample."""
    h = x @ w0 + b0
    h = h / (1.0 + np.exp(-h))
    h = h @ w1 + b1
    h = h / (1.0 + np.exp(-h))
    return h @ w2 + b2


def np_softmax1d(z):
    e = np.exp(z - z.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def nb_sigmoid(x):
        out = np.empty_like(x)
        xf = x.ravel()
        of = out.ravel()
        for i in range(xf.size):
            of[i] = 1.0 / (1.0 + math.exp(-xf[i]))
        return out

    @njit(cache=True)
    def nb_adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
        bc1 = 1.0 - beta1 ** t
        bc2 = 1.0 - beta2 ** t
        for i in range(p.size):
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
            v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
            p[i] -= lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)

    @njit(cache=True)
    def nb_polyak(target, online, tau):
        for i in range(target.size):
            target[i] = tau * online[i] + (1.0 - tau) * target[i]

    @njit(cache=True)
    def nb_gumbel_from_uniform(u):
        out = np.empty_like(u)
        uf = u.ravel()
        of = out.ravel()
        for i in range(uf.size):
            of[i] = -math.log(-math.log(uf[i]))
        return out

    @njit(cache=True)
    def nb_mlp2_silu(x, w0, b0, w1, b1, w2, b2):
        h0 = x @ w0 + b0
        for i in range(h0.size):
            h0[i] = h0[i] / (1.0 + math.exp(-h0[i]))
        h1 = h0 @ w1 + b1
        for i in range(h1.size):
            h1[i] = h1[i] / (1.0 + math.exp(-h1[i]))
        return h1 @ w2 + b2

    @njit(cache=True)
    def nb_softmax1d(z):
        zmax = z[0]
        for i in range(1, z.size):
            if z[i] > zmax:
                zmax = z[i]
        e = np.empty_like(z)
        s = 0.0
        for i in range(z.size):
            e[i] = math.exp(z[i] - zmax)
            s += e[i]
        return e / s


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    # numpy's vectorized exp beats the scalar loop on large arrays, so the
    # jitted elementwise kernels only take the small, latency-bound calls
    _SMALL = 512

    def sigmoid(x):
        if x.ndim and 0 < x.size <= _SMALL:
            return nb_sigmoid(np.ascontiguousarray(x))
        return np_sigmoid(x)

    def gumbel_from_uniform(u):
        if u.size <= _SMALL:
            return nb_gumbel_from_uniform(np.ascontiguousarray(u))
        return np_gumbel_from_uniform(u)

    mlp2_silu = nb_mlp2_silu
    softmax1d = nb_softmax1d

    def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
        nb_adam_update(p.ravel(), np.ascontiguousarray(g).ravel(), m, v,
                       t, lr, beta1, beta2, eps)

    def polyak(target, online, tau):
        nb_polyak(target.ravel(), online.ravel(), tau)

else:
    sigmoid = np_sigmoid
    gumbel_from_uniform = np_gumbel_from_uniform
    mlp2_silu = np_mlp2_silu
    softmax1d = np_softmax1d

    def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
        np_adam_update(p.ravel(), np.asarray(g).ravel(), m, v,
                       t, lr, beta1, beta2, eps)

    def polyak(target, online, tau):
        np_polyak(target.ravel(), online.ravel(), tau)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
