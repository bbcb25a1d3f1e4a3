"""Reverse-mode automatic differentiation on a per-step tape.

Dense float64 tensors record onto a ``Tape``; ``backward`` walks the tape to
produce a ``GradMap``. When a backward pass runs with ``record=True`` its
chain-rule arithmetic is itself taped, so the returned gradients carry
lineage and can be differentiated again (reverse-over-reverse). Every
primitive's VJP is expressed through other primitives, which keeps the set
closed under differentiation to any depth the tape can hold.

Shapes are explicit: elementwise ops require equal shapes, with the single
exception of scalar <-> tensor broadcasting. Row/column broadcasts go
through dedicated ops (``add_rowvec``, ``tile_cols``, ...), which removes a
class of silent shape bugs.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernels

_DEBUG = bool(int(os.environ.get("LAMARL_DEBUG", "0")))


def set_debug(flag):
    """Enable per-op finite checks (slow; meant for tests)."""
    global _DEBUG
    _DEBUG = bool(flag)


class Node:
    __slots__ = ("op", "inputs", "value", "ctx")

    def __init__(self, op, inputs, value, ctx):
        self.op = op
        self.inputs = inputs
        self.value = value
        self.ctx = ctx


class Tape:
    """Append-only op record. One tape per update step; confined to one worker."""

    __slots__ = ("nodes", "recording")

    def __init__(self):
        self.nodes = []
        self.recording = True

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, requires_grad=True):
        """Register an input tensor (typically a parameter) on this tape."""
        value = np.asarray(value, dtype=np.float64)
        if value.ndim > 0 and not value.flags["C_CONTIGUOUS"]:
            value = np.ascontiguousarray(value)
        if not requires_grad:
            return Tensor(value, None, None, False)
        nid = len(self.nodes)
        self.nodes.append(Node("leaf", (), value, None))
        return Tensor(value, self, nid, True)


class Tensor:
    __slots__ = ("value", "tape", "nid", "requires_grad")

    def __init__(self, value, tape=None, nid=None, requires_grad=False):
        self.value = value
        self.tape = tape
        self.nid = nid
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        tag = "taped" if self.tape is not None else "const"
        return f"Tensor({tag}, shape={self.value.shape})"

    # arithmetic sugar; python scalars take the smul/sadd fast path
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return sadd(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return sadd(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        return sadd(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, 1.0 / float(other))
        return mul(self, recip(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def const(value):
    """Wrap a value as a constant tensor (no lineage)."""
    return Tensor(np.asarray(value, dtype=np.float64))


def stop_gradient(x):
    """Forward-exact identity that blocks all backward flow (shares the buffer)."""
    return Tensor(x.value)


def _apply(op, value, inputs, ctx=None):
    if _DEBUG and not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite result from op '{op}'")
    tape = None
    grad = False
    for t in inputs:
        if t.tape is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise ValueError("operands recorded on different tapes")
            grad = grad or t.requires_grad
    if tape is None or not tape.recording or not grad:
        return Tensor(value)
    nid = len(tape.nodes)
    tape.nodes.append(Node(op, inputs, value, ctx))
    return Tensor(value, tape, nid, True)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _binary_shapes(a, b, op):
    if a.value.shape == b.value.shape:
        return
    if a.value.ndim == 0 or b.value.ndim == 0:
        return
    raise ValueError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ "
                     "(only scalar<->tensor broadcasting is supported)")


def add(a, b):
    _binary_shapes(a, b, "add")
    return _apply("add", a.value + b.value, (a, b))


def sub(a, b):
    _binary_shapes(a, b, "sub")
    return _apply("sub", a.value - b.value, (a, b))


def mul(a, b):
    _binary_shapes(a, b, "mul")
    return _apply("mul", a.value * b.value, (a, b))


def neg(a):
    return _apply("neg", -a.value, (a,))


def smul(a, c):
    return _apply("smul", a.value * c, (a,), c)


def sadd(a, c):
    return _apply("sadd", a.value + c, (a,), c)


def recip(a):
    return _apply("recip", 1.0 / a.value, (a,))


def exp(a):
    return _apply("exp", np.exp(a.value), (a,))


def log(a):
    return _apply("log", np.log(a.value), (a,))


def sigmoid(a):
    return _apply("sigmoid", _kernels.sigmoid(a.value), (a,))


def tanh(a):
    return _apply("tanh", np.tanh(a.value), (a,))


def matmul(a, b):
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    return _apply("matmul", a.value @ b.value, (a, b))


def t2(a):
    if a.value.ndim != 2:
        raise ValueError("t2 expects a 2-D operand")
    return _apply("t2", a.value.T, (a,))


def add_rowvec(x, b):
    """(K, n) + (n,) bias add."""
    if x.value.ndim != 2 or b.value.shape != (x.value.shape[1],):
        raise ValueError("add_rowvec expects (K, n) and (n,)")
    return _apply("add_rowvec", x.value + b.value, (x, b))


def colsum(x):
    return _apply("colsum", x.value.sum(axis=0), (x,))


def tile_rows(b, k):
    return _apply("tile_rows", np.broadcast_to(b.value, (k, b.value.shape[0])), (b,), k)


def rowsum(x):
    return _apply("rowsum", x.value.sum(axis=1), (x,))


def tile_cols(c, n):
    k = c.value.shape[0]
    return _apply("tile_cols", np.broadcast_to(c.value.reshape(k, 1), (k, n)), (c,), n)


def sum_all(x):
    return _apply("sum_all", np.asarray(x.value.sum()), (x,))


def bfull(s, shape):
    return _apply("bfull", np.broadcast_to(s.value, shape), (s,), tuple(shape))


def concat_cols(xs):
    xs = tuple(xs)
    value = np.concatenate([x.value for x in xs], axis=1)
    offs = []
    lo = 0
    for x in xs:
        offs.append((lo, lo + x.value.shape[1]))
        lo += x.value.shape[1]
    return _apply("concat_cols", value, xs, tuple(offs))


def slice_cols(x, lo, hi):
    return _apply("slice_cols", x.value[:, lo:hi], (x,), (lo, hi))


def pad_cols(x, lo, n):
    k, w = x.value.shape
    value = np.zeros((k, n))
    value[:, lo:lo + w] = x.value
    return _apply("pad_cols", value, (x,), (lo, n))


# batched 3-D ops for the per-sample parameter-perturbation path

def outer_rows(u, v):
    """(K, m), (K, n) -> (K, m, n) per-row outer products."""
    return _apply("outer_rows", u.value[:, :, None] * v.value[:, None, :], (u, v))


def perw_matvec(x, w):
    """(K, m), (K, m, n) -> (K, n): per-row vector-matrix product."""
    value = np.matmul(x.value[:, None, :], w.value)[:, 0, :]
    return _apply("perw_matvec", value, (x, w))


def batch_t(w):
    return _apply("batch_t", np.swapaxes(w.value, 1, 2), (w,))


def tile_to_batch(w, k):
    return _apply("tile_to_batch", np.broadcast_to(w.value, (k,) + w.value.shape), (w,), k)


def batch_sum(x):
    return _apply("batch_sum", x.value.sum(axis=0), (x,))


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------

def silu(x):
    """x * sigmoid(x); first and second derivatives follow from the tape."""
    return mul(x, sigmoid(x))


def softmax_rows(x):
    """Row-wise softmax of a (K, n) tensor, max-shifted for stability."""
    n = x.value.shape[1]
    shift = const(x.value.max(axis=1))
    e = exp(sub(x, tile_cols(shift, n)))
    return mul(e, tile_cols(recip(rowsum(e)), n))


def mean_all(x):
    return smul(sum_all(x), 1.0 / x.value.size)


def gumbel_softmax(logits, temperature, noise):
    """softmax((logits + noise) / temperature); differentiable w.r.t. logits."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if noise.value.shape != logits.value.shape:
        raise ValueError("noise shape must match logits shape")
    return softmax_rows(smul(add(logits, noise), 1.0 / temperature))


# ---------------------------------------------------------------------------
# VJPs: one partial per (op, input index), computed only when that input
# actually leads to a requested gradient. Each is expressed via primitives,
# so recorded backward passes stay differentiable.
# ---------------------------------------------------------------------------

def _reduce_if_scalar(operand, partial):
    if operand.value.ndim == 0 and partial.value.ndim != 0:
        return sum_all(partial)
    return partial


def _vjp_add(view, g, idx):
    return _reduce_if_scalar(view.inputs[idx], g)


def _vjp_sub(view, g, idx):
    return _reduce_if_scalar(view.inputs[idx], g if idx == 0 else neg(g))


def _vjp_mul(view, g, idx):
    other = view.inputs[1 - idx]
    return _reduce_if_scalar(view.inputs[idx], mul(g, other))


def _vjp_matmul(view, g, idx):
    a, b = view.inputs
    return matmul(g, t2(b)) if idx == 0 else matmul(t2(a), g)


_VJP = {
    "add": _vjp_add,
    "sub": _vjp_sub,
    "mul": _vjp_mul,
    "neg": lambda view, g, i: neg(g),
    "smul": lambda view, g, i: smul(g, view.ctx),
    "sadd": lambda view, g, i: g,
    "recip": lambda view, g, i: neg(mul(g, mul(view.out, view.out))),
    "exp": lambda view, g, i: mul(g, view.out),
    "log": lambda view, g, i: mul(g, recip(view.inputs[0])),
    "sigmoid": lambda view, g, i: mul(mul(g, view.out), sadd(neg(view.out), 1.0)),
    "tanh": lambda view, g, i: mul(g, sadd(neg(mul(view.out, view.out)), 1.0)),
    "matmul": _vjp_matmul,
    "t2": lambda view, g, i: t2(g),
    "add_rowvec": lambda view, g, i: g if i == 0 else colsum(g),
    "colsum": lambda view, g, i: tile_rows(g, view.inputs[0].value.shape[0]),
    "tile_rows": lambda view, g, i: colsum(g),
    "rowsum": lambda view, g, i: tile_cols(g, view.inputs[0].value.shape[1]),
    "tile_cols": lambda view, g, i: rowsum(g),
    "sum_all": lambda view, g, i: bfull(g, view.inputs[0].value.shape),
    "bfull": lambda view, g, i: sum_all(g),
    "concat_cols": lambda view, g, i: slice_cols(g, *view.ctx[i]),
    "slice_cols": lambda view, g, i: pad_cols(g, view.ctx[0], view.inputs[0].value.shape[1]),
    "pad_cols": lambda view, g, i: slice_cols(g, view.ctx[0],
                                              view.ctx[0] + view.inputs[0].value.shape[1]),
    "outer_rows": lambda view, g, i: (perw_matvec(view.inputs[1], batch_t(g)) if i == 0
                                      else perw_matvec(view.inputs[0], g)),
    "perw_matvec": lambda view, g, i: (perw_matvec(g, batch_t(view.inputs[1])) if i == 0
                                       else outer_rows(view.inputs[0], g)),
    "batch_t": lambda view, g, i: batch_t(g),
    "tile_to_batch": lambda view, g, i: batch_sum(g),
    "batch_sum": lambda view, g, i: tile_to_batch(g, view.inputs[0].value.shape[0]),
}


class _NodeView:
    """Node plus a tensor handle for its own output (what VJPs consume)."""

    __slots__ = ("_node", "out")

    def __init__(self, node, out):
        self._node = node
        self.out = out

    @property
    def inputs(self):
        return self._node.inputs

    @property
    def ctx(self):
        return self._node.ctx


class GradMap:
    """Node-id -> gradient tensor, one entry per requested tensor."""

    def __init__(self, grads):
        self._grads = grads

    def of(self, t):
        return self._grads[t.nid]

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            return self._grads[key.nid]
        return self._grads[key]

    def __len__(self):
        return len(self._grads)

    def __iter__(self):
        return iter(self._grads.items())


def backward(root, wrt, record=False):
    """Gradients of a scalar ``root`` w.r.t. each tensor in ``wrt``.

    With ``record=True`` the chain rule is taped, so returned gradients can be
    differentiated again; with ``record=False`` no nodes are appended.
    Tensors in ``wrt`` that root does not reach get zero gradients.
    """
    if root.value.ndim != 0:
        raise ValueError(f"backward root must be scalar, got shape {root.value.shape}")
    wrt = list(wrt)
    for w in wrt:
        if not w.requires_grad or w.tape is None:
            raise ValueError("wrt tensors must be taped with requires_grad set")
    if root.tape is None:
        return GradMap({w.nid: const(np.zeros_like(w.value)) for w in wrt})
    tape = root.tape
    for w in wrt:
        if w.tape is not tape:
            raise ValueError("wrt tensor does not lie on the root's tape")

    nodes = tape.nodes
    # ancestors of root
    anc = set()
    stack = [root.nid]
    while stack:
        nid = stack.pop()
        if nid in anc:
            continue
        anc.add(nid)
        for t in nodes[nid].inputs:
            if t.tape is not None and t.nid not in anc:
                stack.append(t.nid)
    # of those, the ones whose subgraph contains some wrt (others need no adjoint)
    wrt_ids = {w.nid for w in wrt}
    need = set()
    for nid in sorted(anc):
        if nid in wrt_ids:
            need.add(nid)
            continue
        for t in nodes[nid].inputs:
            if t.tape is not None and t.nid in need:
                need.add(nid)
                break

    adjoint = {}
    if root.nid in need:
        adjoint[root.nid] = const(np.ones(()))
    result = {}
    prev = tape.recording
    tape.recording = bool(record)
    try:
        for nid in sorted(anc & need, reverse=True):
            g = adjoint.pop(nid, None)
            if g is None:
                continue
            node = nodes[nid]
            if nid in wrt_ids:
                result[nid] = g
            if node.op == "leaf":
                continue
            view = _NodeView(node, Tensor(node.value, tape, nid, True))
            vjp = _VJP[node.op]
            for idx, t in enumerate(node.inputs):
                if t.tape is None or t.nid not in need:
                    continue
                gin = vjp(view, g, idx)
                cur = adjoint.get(t.nid)
                adjoint[t.nid] = gin if cur is None else add(cur, gin)
    finally:
        tape.recording = prev

    grads = {}
    for w in wrt:
        g = result.get(w.nid)
        if g is None:
            g = const(np.zeros_like(w.value))
        if g.value.shape != w.value.shape:
            raise AssertionError("gradient shape mismatch")
        grads[w.nid] = g
    return GradMap(grads)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter moment buffers plus the bias-correction step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_param(cls, param):
        return cls(m=np.zeros(param.size), v=np.zeros(param.size))


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place on ``param``.

    The caller passes the descent gradient (negate for ascent).
    """
    state.t += 1
    _kernels.adam_update(param, grad, state.m, state.v, state.t, lr, beta1, beta2, eps)
    return param, state
