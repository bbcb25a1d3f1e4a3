import numpy as np
import numpy.testing as npt
import pytest

from lamarl import autodiff as ad


def scalar_leaf(tape, v):
    return tape.leaf(np.asarray(float(v)))


def test_square_gradient():
    tape = ad.Tape()
    x = scalar_leaf(tape, 3.0)
    g = ad.backward(ad.mul(x, x), [x])
    assert g.of(x).value == 6.0


def test_second_order_cubic():
    tape = ad.Tape()
    x = scalar_leaf(tape, 2.0)
    y = ad.mul(ad.mul(x, x), x)
    g1 = ad.backward(y, [x], record=True)
    assert g1.of(x).value == 12.0
    g2 = ad.backward(g1.of(x), [x])
    assert g2.of(x).value == 12.0  # 6x at x=2


def test_backward_record_flag_controls_node_growth():
    tape = ad.Tape()
    x = scalar_leaf(tape, 2.0)
    y = ad.mul(x, x)
    n0 = len(tape)
    ad.backward(y, [x], record=False)
    assert len(tape) == n0
    ad.backward(y, [x], record=True)
    assert len(tape) > n0


def test_nonscalar_root_rejected():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(ValueError):
        ad.backward(x, [x])


def test_unreachable_wrt_gets_zeros():
    tape = ad.Tape()
    x = scalar_leaf(tape, 1.0)
    z = scalar_leaf(tape, 4.0)
    g = ad.backward(ad.mul(x, x), [z])
    assert g.of(z).value == 0.0


def test_wrt_off_tape_rejected():
    tape1, tape2 = ad.Tape(), ad.Tape()
    x = scalar_leaf(tape1, 1.0)
    z = scalar_leaf(tape2, 1.0)
    with pytest.raises(ValueError):
        ad.backward(ad.mul(x, x), [z])


def test_mixed_tapes_rejected():
    tape1, tape2 = ad.Tape(), ad.Tape()
    x = scalar_leaf(tape1, 1.0)
    z = scalar_leaf(tape2, 1.0)
    with pytest.raises(ValueError):
        ad.mul(x, z)


def test_shape_mismatch_rejected():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    y = tape.leaf(np.ones(4))
    with pytest.raises(ValueError):
        ad.add(x, y)


def test_scalar_tensor_broadcast():
    tape = ad.Tape()
    x = tape.leaf(np.asarray([[1.0, 2.0], [3.0, 4.0]]))
    s = scalar_leaf(tape, 2.0)
    y = ad.sum_all(ad.mul(x, s))
    g = ad.backward(y, [x, s])
    npt.assert_array_equal(g.of(x).value, np.full((2, 2), 2.0))
    assert g.of(s).value == 10.0


# ---------------------------------------------------------------------------
# stop-gradient
# ---------------------------------------------------------------------------

def test_stop_gradient_half_product_rule():
    tape = ad.Tape()
    x = scalar_leaf(tape, 3.0)
    y = ad.mul(ad.stop_gradient(x), x)
    assert ad.backward(y, [x]).of(x).value == 3.0


def test_stop_gradient_blocks_all_ancestors():
    tape = ad.Tape()
    x = scalar_leaf(tape, 1.5)
    f = ad.sigmoid(ad.mul(x, x))
    y = ad.mul(ad.stop_gradient(f), ad.const(np.asarray(2.0)))
    assert ad.backward(y, [x]).of(x).value == 0.0


def test_stop_gradient_forward_exact_and_idempotent():
    tape = ad.Tape()
    x = tape.leaf(np.asarray([0.1, -2.5, 7.0]))
    s1 = ad.stop_gradient(x)
    s2 = ad.stop_gradient(s1)
    assert s1.value is x.value
    assert s2.value is s1.value
    assert s1.tape is None and not s1.requires_grad


# ---------------------------------------------------------------------------
# silu
# ---------------------------------------------------------------------------

def test_silu_at_zero():
    tape = ad.Tape()
    x = scalar_leaf(tape, 0.0)
    s = ad.silu(x)
    assert s.value == 0.0
    assert ad.backward(s, [x]).of(x).value == 0.5  # sigma(0) + 0*sigma'(0)


def test_silu_saturates_to_identity():
    tape = ad.Tape()
    x = scalar_leaf(tape, 20.0)
    assert abs(ad.silu(x).value - 20.0) <= 1e-6


# ---------------------------------------------------------------------------
# gumbel softmax
# ---------------------------------------------------------------------------

def test_gumbel_softmax_symmetry():
    tape = ad.Tape()
    logits = tape.leaf(np.zeros((1, 2)))
    out = ad.gumbel_softmax(logits, 1.0, ad.const(np.zeros((1, 2))))
    npt.assert_allclose(out.value, [[0.5, 0.5]])


def test_gumbel_softmax_simplex():
    rng = np.random.default_rng(11)
    tape = ad.Tape()
    logits = tape.leaf(rng.normal(size=(32, 5)))
    noise = ad.const(-np.log(-np.log(rng.random(size=(32, 5)))))
    out = ad.gumbel_softmax(logits, 0.7, noise).value
    npt.assert_allclose(out.sum(axis=1), np.ones(32), atol=1e-12)
    assert (out >= 0).all() and (out < 1).all()


def test_gumbel_softmax_temperature_contract():
    tape = ad.Tape()
    logits = tape.leaf(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        ad.gumbel_softmax(logits, 0.0, ad.const(np.zeros((1, 2))))
    with pytest.raises(ValueError):
        ad.gumbel_softmax(logits, 1.0, ad.const(np.zeros((1, 3))))


def test_gumbel_argmax_frequency_matches_categorical():
    # Gumbel-max over logits (ln 3, 0) picks index 0 with probability 0.75
    rng = np.random.default_rng(5)
    logits = np.array([np.log(3.0), 0.0])
    n = 100_000
    noise = -np.log(-np.log(rng.random(size=(n, 2))))
    hits = np.argmax(logits + noise, axis=1) == 0
    assert abs(hits.mean() - 0.75) <= 0.01


# ---------------------------------------------------------------------------
# adam
# ---------------------------------------------------------------------------

def test_adam_zero_grad_is_identity():
    p = np.asarray([1.0, -2.0, 0.5])
    before = p.copy()
    state = ad.AdamState.for_param(p)
    for _ in range(5):
        ad.adam_step(p, np.zeros(3), state, lr=0.1)
    npt.assert_array_equal(p, before)


def test_adam_first_step_magnitude():
    p = np.asarray([0.0])
    state = ad.AdamState.for_param(p)
    ad.adam_step(p, np.asarray([0.3]), state, lr=0.01)
    # bias-corrected first step has magnitude ~lr regardless of grad scale
    assert abs(abs(p[0]) - 0.01) < 1e-6


def test_adam_converges_on_quadratic():
    # reference: an independent scalar Adam, written out longhand
    def oracle(steps, lr=0.01, b1=0.9, b2=0.999, eps=1e-8):
        p = m = v = 0.0
        for t in range(1, steps + 1):
            g = 2.0 * (p - 1.0)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            p -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        return p

    p = np.zeros(1)
    state = ad.AdamState.for_param(p)
    for _ in range(200):
        ad.adam_step(p, 2.0 * (p - 1.0), state, lr=0.01)
    assert abs(p[0] - 1.0) < 0.05
    npt.assert_allclose(p[0], oracle(200), rtol=1e-12)


# ---------------------------------------------------------------------------
# gradient checks against central differences
# ---------------------------------------------------------------------------

def _composite(fn_name):
    def build(x_t, w_t, b_t):
        h = ad.add_rowvec(ad.matmul(x_t, w_t), b_t)
        if fn_name == "silu":
            h = ad.silu(h)
        elif fn_name == "sigmoid":
            h = ad.sigmoid(h)
        elif fn_name == "tanh":
            h = ad.tanh(h)
        elif fn_name == "softmax":
            h = ad.softmax_rows(h)
        elif fn_name == "square":
            h = ad.mul(h, h)
        return ad.sum_all(ad.mul(h, h))
    return build


@pytest.mark.parametrize("fn_name", ["linear", "silu", "sigmoid", "tanh",
                                     "softmax", "square"])
def test_gradient_matches_central_differences(fn_name):
    rng = np.random.default_rng(hash(fn_name) % 2**31)
    x = rng.normal(size=(4, 3))
    w = rng.normal(size=(3, 5))
    b = rng.normal(size=5)
    build = _composite(fn_name)

    def value(wv):
        tape = ad.Tape()
        return build(ad.const(x), tape.leaf(wv), ad.const(b)).value

    tape = ad.Tape()
    w_t = tape.leaf(w)
    root = build(ad.const(x), w_t, ad.const(b))
    grad = ad.backward(root, [w_t]).of(w_t).value

    h = 1e-5
    fd = np.zeros_like(w)
    for i in range(w.shape[0]):
        for j in range(w.shape[1]):
            wp, wm = w.copy(), w.copy()
            wp[i, j] += h
            wm[i, j] -= h
            fd[i, j] = (value(wp) - value(wm)) / (2 * h)
    denom = np.maximum(np.abs(fd), 1e-6)
    assert np.max(np.abs(grad - fd) / denom) <= 1e-4


def test_mlp_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    w1, b1 = rng.normal(size=(4, 8)), rng.normal(size=8)
    w2, b2 = rng.normal(size=(8, 1)), rng.normal(size=1)
    x = rng.normal(size=(5, 4))

    def forward(w1v):
        tape = ad.Tape()
        w = tape.leaf(w1v)
        h = ad.silu(ad.add_rowvec(ad.matmul(ad.const(x), w), ad.const(b1)))
        out = ad.add_rowvec(ad.matmul(h, ad.const(w2)), ad.const(b2))
        return ad.sum_all(out), w

    root, w = forward(w1)
    grad = ad.backward(root, [w]).of(w).value
    h = 1e-5
    fd = np.zeros_like(w1)
    for i in range(w1.shape[0]):
        for j in range(w1.shape[1]):
            wp, wm = w1.copy(), w1.copy()
            wp[i, j] += h
            wm[i, j] -= h
            fd[i, j] = (forward(wp)[0].value - forward(wm)[0].value) / (2 * h)
    denom = np.maximum(np.abs(fd), 1e-6)
    assert np.max(np.abs(grad - fd) / denom) <= 1e-4


def test_second_order_matches_fd_of_first_gradient():
    rng = np.random.default_rng(7)
    xv = rng.normal(size=(1, 3))

    def first_grad(x_in):
        tape = ad.Tape()
        x = tape.leaf(x_in)
        y = ad.sum_all(ad.silu(ad.mul(ad.sigmoid(x), x)))
        return ad.backward(y, [x], record=True).of(x), x

    g, x = first_grad(xv)
    hvp = ad.backward(ad.sum_all(g), [x]).of(x).value
    h = 1e-5
    fd = np.zeros_like(xv)
    for j in range(3):
        xp, xm = xv.copy(), xv.copy()
        xp[0, j] += h
        xm[0, j] -= h
        fd[0, j] = (first_grad(xp)[0].value.sum() - first_grad(xm)[0].value.sum()) / (2 * h)
    denom = np.maximum(np.abs(fd), 1e-6)
    assert np.max(np.abs(hvp - fd) / denom) <= 1e-3


def test_tape_determinism():
    def run():
        rng = np.random.default_rng(42)
        tape = ad.Tape()
        w = tape.leaf(rng.normal(size=(3, 3)))
        x = ad.const(rng.normal(size=(2, 3)))
        y = ad.sum_all(ad.softmax_rows(ad.matmul(x, w)))
        return ad.backward(y, [w]).of(w).value

    a, b = run(), run()
    assert (a == b).all()


def test_batched_ops_vjps():
    rng = np.random.default_rng(13)
    u = rng.normal(size=(4, 3))
    wv = rng.normal(size=(4, 3, 2))

    def value(uv):
        tape = ad.Tape()
        ut = tape.leaf(uv)
        return ad.sum_all(ad.mul(out_ := ad.perw_matvec(ut, ad.const(wv)), out_)), ut

    root, ut = value(u)
    grad = ad.backward(root, [ut]).of(ut).value
    h = 1e-6
    fd = np.zeros_like(u)
    for i in range(u.shape[0]):
        for j in range(u.shape[1]):
            up, um = u.copy(), u.copy()
            up[i, j] += h
            um[i, j] -= h
            fd[i, j] = (value(up)[0].value - value(um)[0].value) / (2 * h)
    npt.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)
