"""Actor update rules built on anticipated opponent learning steps.

Every rule produces a scalar *sum-over-batch* objective whose gradient with
respect to the focal agent's policy parameters is the (ascent) actor
direction; callers divide the resulting gradient arrays by the batch size.
Working with sums keeps the arithmetic of every rule bitwise-identical to
the plain update when the prediction length is zero.

Critics enter as callables ``q_fn(actions) -> (K, 1) tensor`` with the
observations already closed over, which lets tests substitute analytic
value functions for trained networks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

RULES = ("naive", "la", "lola", "hla", "param_anticipation")
HIERARCHIES = ("by_shaping_capacity", "fixed_random")
MAX_REASONING_ORDER = 4


@dataclass
class AnticipationConfig:
    rule: str = "naive"
    eta_hat: float = 0.0
    reasoning_order: int = 1
    hierarchy: str = "by_shaping_capacity"
    eta_param: float = 0.0
    use_alg3_scaling: bool = False

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}; known: {RULES}")
        if self.eta_hat < 0:
            raise ValueError("eta_hat must be >= 0")
        if not 1 <= self.reasoning_order <= MAX_REASONING_ORDER:
            raise ValueError(f"reasoning_order must lie in 1..{MAX_REASONING_ORDER}")
        if self.hierarchy not in HIERARCHIES:
            raise ValueError(f"unknown hierarchy {self.hierarchy!r}")


def _qsum(q_fn, actions):
    out = q_fn(list(actions))
    return ad.sum_all(out)


def _shift(action, delta, bounds):
    """a + delta, clamped to the policy head's range when one is given.

    The true anticipated action lives in the head's codomain (the opponent's
    policy squashes it there), so the Taylor step is clamped back into range;
    the clamp is straight-through, leaving the gradient untouched. Inside the
    range the correction is exactly zero.
    """
    shifted = ad.add(action, delta)
    if bounds is None:
        return shifted
    clipped = np.clip(shifted.value, bounds[0], bounds[1])
    return ad.add(shifted, ad.const(clipped - shifted.value))


def anticipate_actions(q_fns, actions, i, eta_hat, record=True):
    """Per-sample anticipated action changes of every agent j != i.

    delta_j = eta_hat * dQ_j/da_j evaluated at the current joint actions.
    With ``record=True`` each delta stays differentiable w.r.t. the other
    actions, which is what lets shaping terms flow.
    """
    deltas = {}
    for j in range(len(actions)):
        if j == i:
            continue
        g = ad.backward(_qsum(q_fns[j], actions), [actions[j]], record=record)
        deltas[j] = ad.smul(g.of(actions[j]), eta_hat)
    return deltas


def naive_objective(q_fns, actions, i):
    """Plain deterministic-policy-gradient objective (no anticipation)."""
    return _qsum(q_fns[i], actions)


def la_objective(q_fns, actions, i, eta_hat, bounds=None):
    """Look-ahead: opponents' deltas enter behind a stop-gradient."""
    deltas = anticipate_actions(q_fns, actions, i, eta_hat, record=True)
    args = [a if j == i else _shift(a, ad.stop_gradient(deltas[j]), bounds)
            for j, a in enumerate(actions)]
    return _qsum(q_fns[i], args)


def lola_objective(q_fns, actions, i, eta_hat, order=1, bounds=None):
    """Opponent-shaping objective; gradient flows through the deltas.

    ``order`` > 1 nests the anticipation: agents are modelled as reacting to
    the anticipated actions of the previous reasoning level. Inner levels
    enter as detached values so one extra gradient computation is paid per
    level; the actor differentiates through the top level.
    """
    if not 1 <= order <= MAX_REASONING_ORDER:
        raise ValueError(f"reasoning order must lie in 1..{MAX_REASONING_ORDER}")
    n = len(actions)
    prev = {j: None for j in range(n)}
    for level in range(1, order + 1):
        top = level == order
        cur = {}
        for j in range(n):
            if top and j == i:
                continue
            args = []
            for l in range(n):
                if l == j or prev[l] is None:
                    args.append(actions[l])
                else:
                    args.append(_shift(actions[l], ad.stop_gradient(prev[l]), bounds))
            g = ad.backward(_qsum(q_fns[j], args), [actions[j]], record=top)
            cur[j] = ad.smul(g.of(actions[j]), eta_hat)
        prev = {j: cur.get(j) for j in range(n)}
    args = [a if j == i else _shift(a, prev[j], bounds)
            for j, a in enumerate(actions)]
    return _qsum(q_fns[i], args)


# ---------------------------------------------------------------------------
# hierarchical stages over a common critic
# ---------------------------------------------------------------------------

def hla_update_stage(q_fn, actions, level, abar, eta_hat, use_alg3_scaling=False,
                     bounds=None):
    """One top-down update stage for the agent at ``level`` (0-based).

    ``actions`` is ordered by hierarchy level, lowest first. ``abar`` maps
    every higher level to its frozen post-update action; stages must run
    from the top level down, so all of them must already be present.

    Returns ``(objective, abar_level, direction)``: the stage's actor
    objective (sum over the batch), the frozen action to publish for lower
    stages, and the raw per-sample direction.
    """
    m = len(actions)
    for l in range(level + 1, m):
        if l not in abar:
            raise ValueError(f"stage for level {level} ran before level {l}; "
                             "stages go top-down")

    deltas = {}
    direction = None
    for j in range(level + 1):
        args = []
        for l in range(m):
            if l < j:
                args.append(_shift(actions[l], deltas[l], bounds))
            elif l <= level:
                args.append(actions[l])
            else:
                args.append(abar[l])
        record = j < level  # the stage's own direction is not differentiated further
        g = ad.backward(_qsum(q_fn, args), [actions[j]], record=record).of(actions[j])
        deltas[j] = ad.smul(g, eta_hat)
        if j == level:
            direction = deltas[j] if use_alg3_scaling else g

    objective = ad.sum_all(ad.mul(actions[level], ad.stop_gradient(direction)))
    abar_value = actions[level].value + deltas[level].value
    if bounds is not None:
        abar_value = np.clip(abar_value, bounds[0], bounds[1])
    abar_level = ad.const(abar_value)
    return objective, abar_level, direction


def shaping_capacity(q_fn, actions, i):
    """Batch-averaged influence of agent i on its teammates' learning steps.

    Uses unit prediction length: delta_j = dQ/da_j; the capacity is the sum
    over j != i of the mean row norm of d/da_i <delta_j, dQ/da_j>.
    """
    n = len(actions)
    others = [j for j in range(n) if j != i]
    root = _qsum(q_fn, actions)
    grads = ad.backward(root, [actions[j] for j in others], record=True)
    total = 0.0
    for j in others:
        gj = grads.of(actions[j])
        psi = ad.sum_all(ad.mul(gj, ad.const(gj.value.copy())))
        h = ad.backward(psi, [actions[i]]).of(actions[i]).value
        total += float(np.mean(np.linalg.norm(h, axis=1)))
    return total


def hla_assign_levels(sc, policy="by_shaping_capacity", rng=None):
    """Order agents into hierarchy levels; returns level -> agent index.

    Position 0 is the lowest level; the last position (highest level) gets
    the largest shaping capacity. Ties break toward the lower agent index
    sitting at the lower level. ``fixed_random`` draws one permutation from
    ``rng`` (meant to be fixed for a whole training run).
    """
    m = len(sc)
    if m < 2:
        raise ValueError("hierarchy assignment needs at least two agents")
    if policy == "fixed_random":
        if rng is None:
            raise ValueError("fixed_random assignment needs an rng")
        return list(rng.permutation(m))
    if policy != "by_shaping_capacity":
        raise ValueError(f"unknown hierarchy policy {policy!r}")
    return sorted(range(m), key=lambda a: (sc[a], a))


# ---------------------------------------------------------------------------
# policy-parameter anticipation (reference path for timing comparisons)
# ---------------------------------------------------------------------------

def anticipate_policy_params(net, bound, obs, q_fn_j, actions, j, eta_param, head_fn):
    """Per-state parameter deltas for agent j: eta * dQ_j/dtheta_j per sample.

    The policy forward is rebuilt with per-sample parameter copies so the
    gradient (and later the perturbed forward) resolves independently for
    every batch row.
    """
    k = obs.value.shape[0]
    tiled = {}
    for name in net.param_names():
        p = bound[name]
        tiled[name] = (ad.tile_to_batch(p, k) if p.value.ndim == 2
                       else ad.tile_rows(p, k))
    h = obs
    for layer in range(net.n_layers):
        z = ad.add(ad.perw_matvec(h, tiled[f"w{layer}"]), tiled[f"b{layer}"])
        if layer < net.n_layers - 1 and net.spec.hidden_activation == "silu":
            z = ad.silu(z)
        h = z
    aj = head_fn(h)
    args = [actions[l] if l != j else aj for l in range(len(actions))]
    grads = ad.backward(_qsum(q_fn_j, args), list(tiled.values()), record=True)
    return {name: ad.smul(grads.of(t), eta_param) for name, t in tiled.items()}


def param_anticipation_objective(q_fns, actions, i, eta_param, policy_ctx):
    """Focal objective after perturbing every opponent's policy parameters.

    ``policy_ctx[j] = (net, bound, obs_tensor, head_fn)`` rebuilds agent j's
    action; the perturbed forward keeps the shared-parameter path intact and
    adds the per-sample deltas as exact corrections, so the gradient flows
    through the anticipated parameter step.
    """
    shifted = list(actions)
    for j in range(len(actions)):
        if j == i:
            continue
        net, bound, obs, head_fn = policy_ctx[j]
        deltas = anticipate_policy_params(net, bound, obs, q_fns[j], actions, j,
                                          eta_param, head_fn)
        pre = net.forward_shifted(bound, obs, deltas)
        shifted[j] = head_fn(pre)
    args = [actions[i] if j == i else shifted[j] for j in range(len(actions))]
    return _qsum(q_fns[i], args)
