"""Experiment runner: run / sweep / timing / plot subcommands.

Output layout: ``<out>/<seed>/metrics.csv`` per seed plus a shared
``summary.json``; the sweep and timing subcommands add merged comparison
CSVs. ``LAMARL_OUT_ROOT`` relocates relative output paths.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import multiprocessing as mp
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from . import metrics as metrics_mod
from .config import (PRESETS, SWEEP_PRESETS, TIMING_PRESETS, RunConfig,
                     apply_overrides, config_to_text, fingerprint, load_config)
from .training import ConfigError, TrainConfig, run_training

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None


class CsvSink:
    """Metric sink writing ``episode,seed,metric,value`` rows."""

    def __init__(self, path, seed):
        self.path = Path(path)
        self.seed = seed
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        self._fh.write("episode,seed,metric,value\n")

    def append(self, episode, stats):
        for name in sorted(stats):
            value = float(stats[name])
            if not np.isfinite(value):
                raise ValueError(f"non-finite metric {name!r} at episode {episode}")
            self._fh.write(f"{episode},{self.seed},{name},{value!r}\n")

    def close(self):
        self._fh.close()


def read_metrics_csv(path):
    """metric name -> {episode: value} for one seed file."""
    out = {}
    with open(path) as fh:
        header = fh.readline()
        if header.strip() != "episode,seed,metric,value":
            raise ValueError(f"unexpected metrics.csv header in {path}")
        for line in fh:
            ep, _seed, name, value = line.rstrip("\n").split(",")
            out.setdefault(name, {})[int(ep)] = float(value)
    return out


def resolve_out(arg_out, cfg):
    path = arg_out or cfg.out or cfg.preset or "run"
    root = os.environ.get("LAMARL_OUT_ROOT", "")
    if root and not os.path.isabs(path):
        path = os.path.join(root, path)
    return Path(path)


def _run_seed(args):
    train_cfg, seed, csv_path = args
    cfg = dataclasses.replace(train_cfg, seed=seed)
    sink = CsvSink(csv_path, seed)
    try:
        # the GEMMs here are small; one BLAS thread per worker is fastest and
        # keeps parallel seed workers from oversubscribing the machine
        if threadpool_limits is not None:
            with threadpool_limits(limits=1):
                result = run_training(cfg, [sink])
        else:
            result = run_training(cfg, [sink])
    finally:
        sink.close()
    return seed, result


def execute_run(cfg, out_dir, serial=False):
    """Run every seed of a config; returns (summary dict, ok flag)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.train, seed, out_dir / str(seed) / "metrics.csv")
            for seed in cfg.seeds]
    workers = 1 if serial else (cfg.workers or min(len(jobs), os.cpu_count() or 1))
    started = time.time()
    per_seed = {}
    errors = {}
    if workers <= 1 or len(jobs) == 1:
        for job in jobs:
            try:
                seed, res = _run_seed(job)
                per_seed[seed] = res
            except Exception as err:  # noqa: BLE001 - reported in summary
                errors[job[1]] = repr(err)
    else:
        with mp.get_context("fork").Pool(workers) as pool:
            results = pool.map_async(_run_seed, jobs)
            try:
                for seed, res in results.get():
                    per_seed[seed] = res
            except Exception as err:  # noqa: BLE001
                errors["pool"] = repr(err)
    finals = {}
    for seed, res in per_seed.items():
        for name, value in res["final"].items():
            finals.setdefault(name, []).append(value)
    summary = {
        "preset": cfg.preset,
        "version": __version__,
        "backend": _kernels.backend_name(),
        "fingerprint": fingerprint(cfg),
        "config": config_to_text(cfg),
        "seeds": list(cfg.seeds),
        "per_seed": {str(s): {
            "final": per_seed[s]["final"],
            "updates": per_seed[s]["updates"],
            "wall_clock_s": per_seed[s]["wall_clock_s"],
            "mean_update_ms": per_seed[s]["mean_update_ms"],
        } for s in sorted(per_seed)},
        "aggregate_final_median": {k: float(np.median(v)) for k, v in finals.items()},
        "wall_clock_s": time.time() - started,
        "partial": bool(errors),
        "errors": errors,
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary, not errors


def cmd_run(args):
    cfg = load_config(args.config, args.preset, args.override)
    if args.seeds:
        cfg.seeds = tuple(int(s) for s in args.seeds.split(","))
    if cfg.preset in SWEEP_PRESETS:
        return _sweep(cfg, resolve_out(args.out, cfg), args.serial)
    if cfg.preset in TIMING_PRESETS:
        return _timing(cfg, resolve_out(args.out, cfg))
    out_dir = resolve_out(args.out, cfg)
    _, ok = execute_run(cfg, out_dir, args.serial)
    print(f"wrote {out_dir}/summary.json")
    return 0 if ok else 1


def _sweep(cfg, out_dir, serial=False):
    if not cfg.sweep_values:
        raise ConfigError("sweep needs a non-empty value list")
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    ok = True
    for value in cfg.sweep_values:
        sub = dataclasses.replace(cfg)
        sub = apply_overrides(sub, [f"{cfg.sweep_key}={value!r}"])
        sub_dir = out_dir / f"{cfg.sweep_key.split('.')[-1]}={value!r}"
        summary, this_ok = execute_run(sub, sub_dir, serial)
        ok = ok and this_ok
        for seed, rec in summary["per_seed"].items():
            for name, v in rec["final"].items():
                rows.append((value, seed, name, v))
    with open(out_dir / "sweep.csv", "w") as fh:
        fh.write("value,seed,metric,final\n")
        for value, seed, name, v in rows:
            fh.write(f"{value!r},{seed},{name},{v!r}\n")
    print(f"wrote {out_dir}/sweep.csv")
    return 0 if ok else 1


def cmd_sweep(args):
    cfg = load_config(args.config, args.preset, args.override)
    if args.key:
        cfg.sweep_key = args.key
    if args.values:
        cfg.sweep_values = tuple(float(v) for v in args.values.split(","))
    if args.seeds:
        cfg.seeds = tuple(int(s) for s in args.seeds.split(","))
    return _sweep(cfg, resolve_out(args.out, cfg), args.serial)


def _parse_rule(token):
    if ":" in token:
        rule, order = token.split(":", 1)
        return rule, int(order)
    return token, 1


def _timing_cfg(base, rule, order, width, batch_k):
    antic = dataclasses.replace(base.anticipation, rule=rule,
                                reasoning_order=order)
    if rule == "naive":
        antic = dataclasses.replace(antic, eta_hat=0.0, eta_param=0.0)
    elif rule == "param_anticipation" and antic.eta_param == 0.0:
        antic = dataclasses.replace(antic, eta_param=0.01)
    elif antic.eta_hat == 0.0:
        antic = dataclasses.replace(antic, eta_hat=0.1)
    return dataclasses.replace(base, anticipation=antic, batch_k=batch_k,
                               warmup=batch_k, hidden_dims=(width, width))


def _timing(cfg, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    reps, warm = cfg.timing_repetitions, cfg.timing_warmup_iters
    samples = []

    def run_cells(cells):
        if threadpool_limits is not None:
            with threadpool_limits(limits=1):
                return [metrics_mod.time_updates(c, reps, warm) for c in cells]
        return [metrics_mod.time_updates(c, reps, warm) for c in cells]

    grid = [_timing_cfg(cfg.train, *_parse_rule(tok), cfg.train.hidden_dims[0],
                        cfg.timing_batch_k) for tok in cfg.timing_rules]
    samples += run_cells(grid)
    width_cells = []
    for width in cfg.timing_widths:
        for tok in cfg.timing_width_rules:
            width_cells.append(_timing_cfg(cfg.train, *_parse_rule(tok), width,
                                           cfg.timing_width_batch_k))
    samples += run_cells(width_cells)

    with open(out_dir / "timing.csv", "w") as fh:
        fh.write("rule,order,width,mean_s,std_s,count,anticipation_mean_s,"
                 "fingerprint\n")
        for s in samples:
            fh.write(f"{s.rule},{s.reasoning_order},{s.hidden_width},"
                     f"{s.mean_s!r},{s.std_s!r},{s.count},"
                     f"{s.anticipation_mean_s!r},{s.fingerprint}\n")

    naive = {s.fingerprint: s for s in samples if s.rule == "naive"}
    with open(out_dir / "latc.csv", "w") as fh:
        fh.write("rule,order,width,latc\n")
        for s in samples:
            if s.rule == "naive" or s.fingerprint not in naive:
                continue
            value = metrics_mod.latc(s, naive[s.fingerprint])
            fh.write(f"{s.rule},{s.reasoning_order},{s.hidden_width},{value!r}\n")

    ratio_rows = {}
    for s in samples:
        if s.rule in ("la", "param_anticipation") and s.fingerprint.count(
                f"K{cfg.timing_width_batch_k}|"):
            ratio_rows.setdefault(s.hidden_width, {})[s.rule] = s.mean_s
    with open(out_dir / "width_ratio.csv", "w") as fh:
        fh.write("width,action_s,param_s,ratio\n")
        for width in sorted(ratio_rows):
            row = ratio_rows[width]
            if "la" in row and "param_anticipation" in row:
                fh.write(f"{width},{row['la']!r},{row['param_anticipation']!r},"
                         f"{row['param_anticipation'] / row['la']!r}\n")
    print(f"wrote {out_dir}/timing.csv, latc.csv, width_ratio.csv")
    return 0


def cmd_timing(args):
    cfg = load_config(args.config, args.preset or "latc-grid", args.override)
    return _timing(cfg, resolve_out(args.out, cfg))


# ---------------------------------------------------------------------------
# plot: mean +- std band across seeds, standalone SVG
# ---------------------------------------------------------------------------

def _svg_line_chart(xs, mean, lo, hi, title, path):
    w, h, ml, mr, mt, mb = 640, 400, 60, 20, 30, 40
    x0, x1 = min(xs), max(xs)
    y0 = min(min(lo), 0.0) if min(lo) < 0 else min(lo)
    y1 = max(hi)
    if y1 == y0:
        y1 = y0 + 1.0
    if x1 == x0:
        x1 = x0 + 1

    def sx(x):
        return ml + (x - x0) / (x1 - x0) * (w - ml - mr)

    def sy(y):
        return h - mb - (y - y0) / (y1 - y0) * (h - mt - mb)

    pts = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, mean))
    band = (" ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, hi))
            + " " + " ".join(f"{sx(x):.1f},{sy(y):.1f}"
                             for x, y in zip(reversed(xs), reversed(lo))))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<polygon points="{band}" fill="#9ecae1" opacity="0.5"/>',
        f'<polyline points="{pts}" fill="none" stroke="#08519c" stroke-width="1.5"/>',
        f'<line x1="{ml}" y1="{h-mb}" x2="{w-mr}" y2="{h-mb}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h-mb}" stroke="black"/>',
        f'<text x="{w/2:.0f}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<text x="{w/2:.0f}" y="{h-8}" text-anchor="middle" font-size="12">episode</text>',
        f'<text x="{ml}" y="{h-mb+14}" font-size="10">{x0}</text>',
        f'<text x="{w-mr}" y="{h-mb+14}" text-anchor="end" font-size="10">{x1}</text>',
        f'<text x="{ml-4}" y="{sy(y0):.0f}" text-anchor="end" font-size="10">{y0:.3g}</text>',
        f'<text x="{ml-4}" y="{sy(y1):.0f}" text-anchor="end" font-size="10">{y1:.3g}</text>',
        "</svg>",
    ]
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def cmd_plot(args):
    run_dir = Path(args.dir)
    seed_files = sorted(run_dir.glob("*/metrics.csv"))
    if not seed_files:
        print(f"error: no metrics.csv under {run_dir}", file=sys.stderr)
        return 2
    per_seed = [read_metrics_csv(f) for f in seed_files]
    available = sorted({m for ps in per_seed for m in ps})
    if args.metric not in available:
        print(f"error: metric {args.metric!r} not found; available: "
              f"{', '.join(available)}", file=sys.stderr)
        return 2
    episodes = sorted({ep for ps in per_seed for ep in ps.get(args.metric, {})})
    xs, mean, lo, hi = [], [], [], []
    rows = []
    for ep in episodes:
        vals = [ps[args.metric][ep] for ps in per_seed if ep in ps.get(args.metric, {})]
        if not vals:
            continue
        m, s = float(np.mean(vals)), float(np.std(vals))
        xs.append(ep)
        mean.append(m)
        lo.append(m - s)
        hi.append(m + s)
        rows.append((ep, m, s, len(vals)))
    out = Path(args.out) if args.out else run_dir / f"{args.metric}.svg"
    out.parent.mkdir(parents=True, exist_ok=True)
    _svg_line_chart(xs, mean, lo, hi, args.metric, out)
    points = out.with_suffix(".csv")
    with open(points, "w") as fh:
        fh.write("episode,mean,std,n_seeds\n")
        for ep, m, s, n in rows:
            fh.write(f"{ep},{m!r},{s!r},{n}\n")
    print(f"wrote {out} and {points}")
    return 0


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="lamarl",
                                     description="learning-anticipation MARL "
                                                 "benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file path")
        p.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
        p.add_argument("--seeds", help="comma list, e.g. 0,1,2,3,4")
        p.add_argument("--out", help="output directory")
        p.add_argument("--override", action="append", default=[],
                       metavar="SECTION.KEY=VALUE")
        p.add_argument("--serial", action="store_true",
                       help="run seeds sequentially")

    p_run = sub.add_parser("run", help="run a preset or config over its seeds")
    common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run one config across values of a key")
    common(p_sweep)
    p_sweep.add_argument("--key", help="dotted config key, e.g. anticipation.eta_hat")
    p_sweep.add_argument("--values", help="comma list of values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_tim = sub.add_parser("timing",
                           help="per-iteration timing grid (serial, 1 BLAS thread)")
    common(p_tim)
    p_tim.set_defaults(func=cmd_timing)

    p_plot = sub.add_parser("plot", help="render mean+-std learning curves")
    p_plot.add_argument("dir", help="run directory containing <seed>/metrics.csv")
    p_plot.add_argument("--metric", required=True)
    p_plot.add_argument("--out", help="output .svg path")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
