"""Evaluation metrics and the wall-clock timing harness."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class MetricPoint:
    episode: int
    name: str
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"metric {self.name!r} is not finite")


def dte(a1, a2):
    """Euclidean distance of the joint action from the (0.5, 0.5) fixed point."""
    return math.sqrt((a1 - 0.5) ** 2 + (a2 - 0.5) ** 2)


def aer(episode_rewards):
    """Per-step reward averaged over steps and agents for one episode."""
    rewards = np.asarray(episode_rewards, dtype=np.float64)
    if rewards.size == 0:
        raise ValueError("aer needs a non-empty episode")
    return float(rewards.mean())


def naer(value, lower, upper):
    """Value normalized between baseline rewards, clamped for reporting."""
    if upper <= lower:
        raise ValueError("naer needs upper > lower")
    return float(np.clip((value - lower) / (upper - lower), -0.5, 1.5))


@dataclass
class TimingSample:
    rule: str
    reasoning_order: int
    hidden_width: int
    mean_s: float
    std_s: float
    count: int
    fingerprint: str
    anticipation_mean_s: float = 0.0

    def __post_init__(self):
        if self.mean_s <= 0:
            raise ValueError("timing mean must be positive")
        if self.count < 30:
            raise ValueError("timing samples need at least 30 repetitions")


def latc(timed, naive_timed):
    """Per-iteration training-time overhead of a rule relative to its
    anticipation-free counterpart (0 means no added cost)."""
    if timed.fingerprint != naive_timed.fingerprint:
        raise ValueError("LATC inputs come from different configurations: "
                         f"{timed.fingerprint} vs {naive_timed.fingerprint}")
    value = timed.mean_s / naive_timed.mean_s - 1.0
    if value < -0.05:
        log.warning("negative LATC %.3f (timing noise?)", value)
    return value


def config_fingerprint(cfg):
    """Identity of everything that must match for LATC comparisons."""
    return (f"{cfg.env}|h{'x'.join(str(d) for d in cfg.hidden_dims)}"
            f"|K{cfg.batch_k}|T{cfg.horizon}|lr{cfg.lr}|g{cfg.gamma}")


def time_updates(cfg, repetitions=120, warmup=20):
    """Time full update iterations (critic + actor) for one configuration.

    Prefills the buffer with behavior rollouts, runs ``warmup`` untimed
    iterations, then times ``repetitions`` more. Meant for a quiet,
    single-threaded machine; see the README note on timing runs.
    """
    from .training import Trainer  # local import: training also uses metrics

    if repetitions < 30:
        raise ValueError("need at least 30 timed repetitions")
    trainer = Trainer(cfg)
    trainer.prefill(max(trainer.warmup, cfg.batch_k))
    for _ in range(warmup):
        trainer.update_step()
    times = np.empty(repetitions)
    antic = np.empty(repetitions)
    for r in range(repetitions):
        a0 = trainer.anticipation_seconds
        t0 = time.perf_counter()
        trainer.update_step()
        times[r] = time.perf_counter() - t0
        antic[r] = trainer.anticipation_seconds - a0
    return TimingSample(
        rule=cfg.anticipation.rule,
        reasoning_order=cfg.anticipation.reasoning_order,
        hidden_width=cfg.hidden_dims[0],
        mean_s=float(times.mean()),
        std_s=float(times.std()),
        count=repetitions,
        fingerprint=config_fingerprint(cfg),
        anticipation_mean_s=float(antic.mean()),
    )


def timing_harness(cfgs, repetitions=120, warmup=20):
    """Run ``time_updates`` over a grid of configurations."""
    return [time_updates(cfg, repetitions, warmup) for cfg in cfgs]
