import math

import numpy as np
import pytest

from lamarl import envs, metrics
from lamarl.anticipation import AnticipationConfig
from lamarl.training import TrainConfig


def test_dte_cases():
    assert metrics.dte(0.5, 0.5) == 0.0
    assert metrics.dte(1.0, 1.0) == pytest.approx(math.sqrt(0.5))
    assert metrics.dte(0.0, 0.5) == 0.5


def test_dte_symmetries():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a1, a2 = rng.random(), rng.random()
        assert metrics.dte(a1, a2) == pytest.approx(metrics.dte(a2, a1))
        assert metrics.dte(a1, a2) == pytest.approx(metrics.dte(1 - a1, 1 - a2))


def test_aer_cases():
    assert metrics.aer([[-1.0, -1.0]] * 10) == -1.0
    assert metrics.aer([[0.0, 2.0]] * 5) == 1.0
    with pytest.raises(ValueError):
        metrics.aer([])


def test_aer_mutual_defection_matches_reward_table():
    env = envs.IteratedPrisonersDilemma(horizon=20)
    env.reset(np.random.default_rng(0))
    defect = np.array([0.0, 1.0])
    rewards = [env.step([defect, defect]).rewards for _ in range(20)]
    assert metrics.aer(rewards) == -3.0


def test_naer_cases():
    assert metrics.naer(5.0, 0.0, 5.0) == 1.0
    assert metrics.naer(0.0, 0.0, 5.0) == 0.0
    assert metrics.naer(2.5, 0.0, 5.0) == 0.5
    assert metrics.naer(100.0, 0.0, 5.0) == 1.5  # clamped
    with pytest.raises(ValueError):
        metrics.naer(1.0, 2.0, 2.0)


def test_naer_affine_invariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        v, lo = rng.normal(), rng.normal()
        hi = lo + abs(rng.normal()) + 0.1
        shift = rng.normal()
        assert metrics.naer(v, lo, hi) == pytest.approx(
            metrics.naer(v + shift, lo + shift, hi + shift))


def _sample(mean, rule="la", fp="irg|h64x64|K8|T5|lr0.01|g0.95"):
    return metrics.TimingSample(rule=rule, reasoning_order=1, hidden_width=64,
                                mean_s=mean, std_s=0.0, count=30, fingerprint=fp)


def test_latc_formula():
    naive = _sample(0.010, rule="naive")
    assert metrics.latc(_sample(0.010), naive) == pytest.approx(0.0)
    assert metrics.latc(_sample(0.020), naive) == pytest.approx(1.0)


def test_latc_fingerprint_contract():
    naive = _sample(0.010, rule="naive", fp="irg|h64x64|K8|T5|lr0.01|g0.95")
    other = _sample(0.012, fp="ipd|h64x64|K8|T150|lr0.01|g0.95")
    with pytest.raises(ValueError):
        metrics.latc(other, naive)


def test_timing_sample_validation():
    with pytest.raises(ValueError):
        _sample(0.0)
    with pytest.raises(ValueError):
        metrics.TimingSample("la", 1, 64, 0.1, 0.0, 10, "fp")


def test_metric_point_finite():
    metrics.MetricPoint(1, "aer", 0.5)
    with pytest.raises(ValueError):
        metrics.MetricPoint(1, "aer", float("nan"))


def test_time_updates_smoke():
    cfg = TrainConfig(env="irg", episodes=1, horizon=5, batch_k=8, warmup=8,
                      hidden_dims=(6, 6),
                      anticipation=AnticipationConfig(rule="la", eta_hat=0.5))
    sample = metrics.time_updates(cfg, repetitions=30, warmup=2)
    assert sample.mean_s > 0
    assert sample.count == 30
    assert sample.rule == "la"
    assert sample.anticipation_mean_s >= 0
    with pytest.raises(ValueError):
        metrics.time_updates(cfg, repetitions=10)
