#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Run with the default backend (numba when available):

    python benchmarks/bench_backends.py

The table reports per-call microseconds for each kernel and the end-to-end
update iteration of a small trainer under both backends. The backend used by
the library itself is chosen at import via LAMARL_BACKEND; this script calls
both implementations directly, so one process covers the comparison.
"""

import time

import numpy as np

from lamarl import _kernels as k


def clock(fn, *args, reps=2000):
    fn(*args)  # warm (JIT) before timing
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return 1e6 * (time.perf_counter() - t0) / reps


def main():
    rng = np.random.default_rng(0)
    rows = []

    x = rng.normal(size=(1024, 64))
    rows.append(("sigmoid (1024x64)", clock(k.np_sigmoid, x),
                 clock(k.nb_sigmoid, x) if k.HAS_NUMBA else float("nan")))

    u = np.clip(rng.random(size=4096), 1e-12, 1 - 1e-12)
    rows.append(("gumbel noise (4096)", clock(k.np_gumbel_from_uniform, u),
                 clock(k.nb_gumbel_from_uniform, u) if k.HAS_NUMBA else float("nan")))

    p = rng.normal(size=64 * 64)
    g = rng.normal(size=64 * 64)
    m, v = np.zeros(p.size), np.zeros(p.size)

    def np_adam():
        k.np_adam_update(p, g, m, v, 5, 0.01, 0.9, 0.999, 1e-8)

    def nb_adam():
        k.nb_adam_update(p, g, m, v, 5, 0.01, 0.9, 0.999, 1e-8)

    rows.append(("adam step (4096 params)", clock(np_adam),
                 clock(nb_adam) if k.HAS_NUMBA else float("nan")))

    t = rng.normal(size=64 * 64)
    o = rng.normal(size=64 * 64)
    rows.append(("polyak (4096 params)",
                 clock(lambda: k.np_polyak(t, o, 0.01)),
                 clock(lambda: k.nb_polyak(t, o, 0.01)) if k.HAS_NUMBA
                 else float("nan")))

    obs = rng.normal(size=10)
    w0, b0 = rng.normal(size=(10, 64)), rng.normal(size=64)
    w1, b1 = rng.normal(size=(64, 64)), rng.normal(size=64)
    w2, b2 = rng.normal(size=(64, 5)), rng.normal(size=5)
    rows.append(("rollout forward (10-64-64-5)",
                 clock(k.np_mlp2_silu, obs, w0, b0, w1, b1, w2, b2),
                 clock(k.nb_mlp2_silu, obs, w0, b0, w1, b1, w2, b2)
                 if k.HAS_NUMBA else float("nan")))

    z = rng.normal(size=5)
    rows.append(("softmax1d (5)", clock(k.np_softmax1d, z),
                 clock(k.nb_softmax1d, z) if k.HAS_NUMBA else float("nan")))

    print(f"library backend: {k.backend_name()}")
    print(f"{'kernel':<30} {'numpy us':>10} {'numba us':>10} {'speedup':>8}")
    for name, np_us, nb_us in rows:
        speed = np_us / nb_us if nb_us == nb_us and nb_us > 0 else float("nan")
        print(f"{name:<30} {np_us:>10.2f} {nb_us:>10.2f} {speed:>8.2f}x")

    # end-to-end: one full update iteration of a small trainer
    from lamarl.anticipation import AnticipationConfig
    from lamarl.metrics import time_updates
    from lamarl.training import TrainConfig

    cfg = TrainConfig(env="pcg", episodes=1, horizon=25, batch_k=256, warmup=256,
                      anticipation=AnticipationConfig(rule="hla", eta_hat=0.1))
    sample = time_updates(cfg, repetitions=30, warmup=5)
    print(f"\nfull hla update iteration ({k.backend_name()} backend): "
          f"{1e3 * sample.mean_s:.2f} ms "
          f"(anticipation {1e3 * sample.anticipation_mean_s:.2f} ms)")
    print("re-run with LAMARL_BACKEND=numpy to compare the full-iteration path")


if __name__ == "__main__":
    main()
