"""Policy and critic MLPs, target copies, and parameter utilities.

Policies map one agent's observation to its action; critics map the
concatenation of every agent's observation and action to a scalar value.
Networks store parameters as plain float64 arrays and are bound to a tape
per update step; rollouts use an untaped numpy fast path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import autodiff as ad

HIDDEN_ACTIVATIONS = ("silu", "identity")
OUTPUT_HEADS = ("identity", "sigmoid", "tanh", "gumbel_softmax")


@dataclass
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dims: tuple = (64, 64)
    hidden_activation: str = "silu"
    output_head: str = "identity"

    def __post_init__(self):
        self.hidden_dims = tuple(self.hidden_dims)
        if self.input_dim < 1 or self.output_dim < 1 or not self.hidden_dims:
            raise ValueError("MlpSpec dims must be >= 1 and hidden_dims non-empty")
        if any(d < 1 for d in self.hidden_dims):
            raise ValueError("hidden dims must be >= 1")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_head not in OUTPUT_HEADS:
            raise ValueError(f"unknown output head {self.output_head!r}")

    @property
    def layer_dims(self):
        return (self.input_dim,) + self.hidden_dims + (self.output_dim,)


class Mlp:
    """Fully connected network; weights uniform in +-1/sqrt(fan_in)."""

    def __init__(self, spec, params):
        self.spec = spec
        self.params = params

    @classmethod
    def init(cls, spec, rng):
        params = {}
        dims = spec.layer_dims
        for layer, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            bound = 1.0 / np.sqrt(din)
            params[f"w{layer}"] = rng.uniform(-bound, bound, size=(din, dout))
            params[f"b{layer}"] = rng.uniform(-bound, bound, size=dout)
        return cls(spec, params)

    @property
    def n_layers(self):
        return len(self.spec.hidden_dims) + 1

    def param_names(self):
        return [f"{kind}{layer}" for layer in range(self.n_layers) for kind in ("w", "b")]

    def bind(self, tape):
        """Register every parameter as a leaf on ``tape``."""
        return {name: tape.leaf(self.params[name]) for name in self.param_names()}

    def forward(self, bound, x):
        """Taped pre-head forward of a (K, input_dim) tensor."""
        if x.value.ndim != 2 or x.value.shape[1] != self.spec.input_dim:
            raise ValueError(f"expected (K, {self.spec.input_dim}) input, "
                             f"got {x.value.shape}")
        h = x
        for layer in range(self.n_layers):
            h = ad.add_rowvec(ad.matmul(h, bound[f"w{layer}"]), bound[f"b{layer}"])
            if layer < self.n_layers - 1 and self.spec.hidden_activation == "silu":
                h = ad.silu(h)
        return h

    def forward_shifted(self, bound, x, deltas):
        """Pre-head forward with per-sample parameter offsets.

        ``deltas[name]`` holds a (K, ...) tensor added to the corresponding
        parameter independently for every row of ``x``; the base path stays
        the ordinary shared-weight computation, with the offsets entering as
        exact correction terms.
        """
        h = x
        for layer in range(self.n_layers):
            z = ad.add_rowvec(ad.matmul(h, bound[f"w{layer}"]), bound[f"b{layer}"])
            dw = deltas.get(f"w{layer}")
            if dw is not None:
                z = ad.add(z, ad.perw_matvec(h, dw))
            db = deltas.get(f"b{layer}")
            if db is not None:
                z = ad.add(z, db)
            if layer < self.n_layers - 1 and self.spec.hidden_activation == "silu":
                z = ad.silu(z)
            h = z
        return h

    def forward_np(self, x):
        """Untaped pre-head forward; ``x`` is (K, input_dim) or (input_dim,)."""
        squeeze = x.ndim == 1
        if squeeze:
            if (len(self.spec.hidden_dims) == 2
                    and self.spec.hidden_activation == "silu"):
                p = self.params
                return _kernels.mlp2_silu(x, p["w0"], p["b0"], p["w1"], p["b1"],
                                          p["w2"], p["b2"])
            x = x[None, :]
        h = x
        for layer in range(self.n_layers):
            h = h @ self.params[f"w{layer}"] + self.params[f"b{layer}"]
            if layer < self.n_layers - 1 and self.spec.hidden_activation == "silu":
                h = h * _kernels.sigmoid(h)
        return h[0] if squeeze else h

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}


class PolicyNet(Mlp):
    """Deterministic policy; the head fixes the action range."""

    @classmethod
    def for_agent(cls, obs_dim, act_dim, rng, hidden_dims=(64, 64), head="sigmoid",
                  hidden_activation="silu"):
        spec = MlpSpec(obs_dim, act_dim, hidden_dims, hidden_activation, head)
        return cls.init(spec, rng)


class CriticNet(Mlp):
    """Centralized critic over all observations and actions; scalar output."""

    @classmethod
    def for_game(cls, obs_dims, act_dims, rng, hidden_dims=(64, 64),
                 hidden_activation="silu"):
        spec = MlpSpec(sum(obs_dims) + sum(act_dims), 1, hidden_dims,
                       hidden_activation, "identity")
        return cls.init(spec, rng)


def apply_head(net, pre, mode="train", noise=None, temperature=1.0):
    """Turn a pre-head tensor into the policy's action tensor."""
    head = net.spec.output_head
    if head == "identity":
        return pre
    if head == "sigmoid":
        return ad.sigmoid(pre)
    if head == "tanh":
        return ad.tanh(pre)
    # gumbel_softmax head
    if mode == "eval":
        return ad.const(onehot_rows(pre.value))
    if noise is None:
        raise ValueError("train-mode gumbel head requires a noise tensor")
    return ad.gumbel_softmax(pre, temperature, noise)


def policy_forward(net, bound, obs, mode="train", noise=None, temperature=1.0):
    """Action tensor for a batch of observations.

    Train mode applies the head as-is (a relaxed, differentiable sample for
    the gumbel head, which requires ``noise``); eval mode returns the greedy
    action: one-hot argmax for discrete heads, the deterministic value
    otherwise.
    """
    return apply_head(net, net.forward(bound, obs), mode, noise, temperature)


def policy_logits_np(net, obs):
    """Untaped pre-head output for rollouts."""
    return net.forward_np(obs)


def policy_act_np(net, obs, mode="eval"):
    """Untaped greedy action for a single observation."""
    pre = net.forward_np(obs)
    head = net.spec.output_head
    if head == "identity":
        return pre
    if head == "sigmoid":
        return _kernels.sigmoid(pre)
    if head == "tanh":
        return np.tanh(pre)
    out = np.zeros_like(pre)
    out[np.argmax(pre)] = 1.0
    return out


def onehot_rows(values):
    out = np.zeros_like(values)
    out[np.arange(values.shape[0]), np.argmax(values, axis=1)] = 1.0
    return out


def critic_forward(net, bound, obs_all, actions_all):
    """Scalar value per batch row, differentiable w.r.t. every action input."""
    x = ad.concat_cols(list(obs_all) + list(actions_all))
    if x.value.shape[1] != net.spec.input_dim:
        raise ValueError(f"critic expects concatenated width {net.spec.input_dim}, "
                         f"got {x.value.shape[1]}")
    return net.forward(bound, x)


def critic_forward_np(params_net, obs_all, actions_all):
    x = np.concatenate(list(obs_all) + list(actions_all), axis=1)
    return params_net.forward_np(x)


@dataclass
class TargetPair:
    """Online network plus its slow-moving target copy."""

    online: Mlp
    target: dict = field(default=None)
    tau: float = 0.01

    def __post_init__(self):
        if self.target is None:
            self.target = self.online.copy_params()

    def target_net(self):
        return Mlp(self.online.spec, self.target)


def polyak_update(pair):
    """target <- tau * online + (1 - tau) * target, elementwise."""
    for name, online in pair.online.params.items():
        _kernels.polyak(pair.target[name], online, pair.tau)


def grad_norm_projection(net, obs, wrt=None):
    """Squared Frobenius norm of the policy Jacobian w.r.t. its parameters.

    Multi-output policies contribute the sum of per-output squared gradient
    norms. Discrete heads are evaluated through the zero-noise softmax so the
    quantity stays defined. ``wrt`` restricts the parameter set by name.
    """
    obs = np.asarray(obs, dtype=np.float64).reshape(1, -1)
    tape = ad.Tape()
    bound = net.bind(tape)
    pre = net.forward(bound, ad.const(obs))
    head = net.spec.output_head
    if head == "sigmoid":
        out = ad.sigmoid(pre)
    elif head == "tanh":
        out = ad.tanh(pre)
    elif head == "gumbel_softmax":
        out = ad.softmax_rows(pre)
    else:
        out = pre
    names = list(net.param_names()) if wrt is None else list(wrt)
    leaves = [bound[n] for n in names]
    total = 0.0
    for j in range(out.value.shape[1]):
        comp = ad.sum_all(ad.slice_cols(out, j, j + 1))
        grads = ad.backward(comp, leaves)
        for leaf in leaves:
            g = grads.of(leaf).value
            total += float(np.sum(g * g))
    return total


# ---------------------------------------------------------------------------
# checkpoints: text records of (name, shape, values); see README for layout
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = "lamarl-params v1"


def save_checkpoint(path, named_nets):
    with open(path, "w") as fh:
        fh.write(CHECKPOINT_MAGIC + "\n")
        for prefix, net in named_nets.items():
            for name in net.param_names():
                arr = net.params[name]
                shape = "x".join(str(d) for d in arr.shape)
                vals = " ".join(repr(float(v)) for v in arr.ravel())
                fh.write(f"{prefix}.{name} {shape} {vals}\n")


def load_checkpoint(path, named_nets):
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CHECKPOINT_MAGIC:
            raise ValueError(f"not a parameter checkpoint: {path}")
        for line in fh:
            full, shape_s, *vals = line.split()
            prefix, name = full.rsplit(".", 1)
            shape = tuple(int(d) for d in shape_s.split("x"))
            arr = np.asarray([float(v) for v in vals]).reshape(shape)
            named_nets[prefix].params[name][...] = arr
