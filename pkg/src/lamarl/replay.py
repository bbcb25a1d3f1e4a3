"""Experience storage and exploratory action generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels


@dataclass
class Transition:
    obs: list
    actions: list
    rewards: np.ndarray
    next_obs: list
    terminal: bool


@dataclass
class Batch:
    obs: list       # per agent, (K, obs_dim)
    actions: list   # per agent, (K, act_dim)
    rewards: np.ndarray  # (K, n_agents)
    next_obs: list
    done: np.ndarray     # (K,)

    @property
    def size(self):
        return self.rewards.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring buffer over preallocated arrays."""

    def __init__(self, capacity, obs_dims, act_dims):
        self.capacity = int(capacity)
        self.n_agents = len(obs_dims)
        self._obs = [np.empty((capacity, d)) for d in obs_dims]
        self._act = [np.empty((capacity, d)) for d in act_dims]
        self._rew = np.empty((capacity, self.n_agents))
        self._next = [np.empty((capacity, d)) for d in obs_dims]
        self._done = np.empty(capacity)
        self._count = 0

    def __len__(self):
        return min(self._count, self.capacity)

    def push(self, t):
        idx = self._count % self.capacity
        for k in range(self.n_agents):
            obs = np.asarray(t.obs[k], dtype=np.float64)
            act = np.asarray(t.actions[k], dtype=np.float64)
            if obs.shape != self._obs[k][idx].shape or act.shape != self._act[k][idx].shape:
                raise ValueError("transition shape does not match buffer layout")
            self._obs[k][idx] = obs
            self._act[k][idx] = act
            self._next[k][idx] = t.next_obs[k]
        self._rew[idx] = t.rewards
        self._done[idx] = 1.0 if t.terminal else 0.0
        self._count += 1

    def sample(self, k, rng):
        """Uniform sample of ``k`` transitions with replacement, or None
        when the buffer is not yet that full (caller skips the update)."""
        n = len(self)
        if n < k:
            return None
        idx = rng.integers(0, n, size=k)
        return Batch(
            obs=[o[idx].copy() for o in self._obs],
            actions=[a[idx].copy() for a in self._act],
            rewards=self._rew[idx].copy(),
            next_obs=[o[idx].copy() for o in self._next],
            done=self._done[idx].copy(),
        )


def gumbel_noise(rng, shape):
    """Standard Gumbel draws via -log(-log(u))."""
    u = rng.random(size=shape)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    return _kernels.gumbel_from_uniform(u)


def behavior_action(det, kind, rng, sigma=1.0, low=0.0, high=1.0,
                    logits=None, temperature=1.0):
    """Exploratory action around the deterministic policy output.

    Continuous: additive Gaussian noise, clamped to the valid range.
    Discrete: a fresh relaxed Gumbel-softmax draw from ``logits``.
    """
    if kind == "continuous":
        noisy = det + sigma * rng.standard_normal(det.shape)
        return np.clip(noisy, low, high)
    if logits is None:
        raise ValueError("discrete behavior actions need the policy logits")
    z = (logits + gumbel_noise(rng, logits.shape)) / temperature
    return _kernels.softmax1d(z)
