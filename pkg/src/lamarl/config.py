"""Run configuration: flat sectioned key=value files, presets, fingerprints.

Grammar (see README for the full key table): ``[section]`` headers, one
``key = value`` pair per line, ``#`` comments, blank lines ignored. Unknown
sections or keys are rejected with the offending line number. Values are
plain scalars or comma lists; there is no nesting or quoting.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

from .anticipation import AnticipationConfig, HIERARCHIES, RULES
from .training import ConfigError, TrainConfig


def _parse_bool(s):
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_int_list(s):
    return tuple(int(v) for v in s.split(",") if v.strip() != "")


def _parse_float_list(s):
    return tuple(float(v) for v in s.split(",") if v.strip() != "")


def _parse_str_list(s):
    return tuple(v.strip() for v in s.split(",") if v.strip() != "")


def _opt(parser):
    def inner(s):
        return None if s.strip() == "" or s.strip().lower() == "none" else parser(s)
    return inner


# section -> key -> (target field, parser)
SCHEMA = {
    "run": {
        "preset": ("preset", str),
        "seeds": ("seeds", _parse_int_list),
        "out": ("out", str),
        "workers": ("workers", int),
    },
    "train": {
        "env": ("env", str),
        "episodes": ("episodes", int),
        "horizon": ("horizon", _opt(int)),
        "gamma": ("gamma", float),
        "lr": ("lr", float),
        "batch_k": ("batch_k", int),
        "buffer_capacity": ("buffer_capacity", int),
        "tau_polyak": ("tau_polyak", float),
        "warmup": ("warmup", _opt(int)),
        "actor_warmup": ("actor_warmup", _opt(int)),
        "update_every": ("update_every", int),
        "eval_every": ("eval_every", int),
        "eval_episodes": ("eval_episodes", int),
        "sigma_explore": ("sigma_explore", float),
        "sigma_final": ("sigma_final", _opt(float)),
        "gumbel_temperature": ("gumbel_temperature", float),
        "logit_reg": ("logit_reg", float),
        "adam_eps": ("adam_eps", float),
        "hidden_dims": ("hidden_dims", _parse_int_list),
        "ipd_dd_reward": ("ipd_dd_reward", float),
        "shared_critic": ("shared_critic", _opt(_parse_bool)),
    },
    "anticipation": {
        "rule": ("rule", str),
        "eta_hat": ("eta_hat", float),
        "reasoning_order": ("reasoning_order", int),
        "hierarchy": ("hierarchy", str),
        "eta_param": ("eta_param", float),
        "use_alg3_scaling": ("use_alg3_scaling", _parse_bool),
    },
    "sweep": {
        "key": ("sweep_key", str),
        "values": ("sweep_values", _parse_float_list),
    },
    "timing": {
        "rules": ("timing_rules", _parse_str_list),
        "width_rules": ("timing_width_rules", _parse_str_list),
        "widths": ("timing_widths", _parse_int_list),
        "batch_k": ("timing_batch_k", int),
        "width_batch_k": ("timing_width_batch_k", int),
        "repetitions": ("timing_repetitions", int),
        "warmup_iters": ("timing_warmup_iters", int),
    },
}


@dataclass
class RunConfig:
    """Everything a run needs: training fields plus orchestration fields."""

    preset: str = ""
    seeds: tuple = (0, 1, 2, 3, 4)
    out: str = ""
    workers: int = 0  # 0 -> one worker per seed, capped at available cores
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep_key: str = "anticipation.eta_hat"
    sweep_values: tuple = ()
    timing_rules: tuple = ("naive", "la", "lola:1", "lola:2", "lola:3", "lola:4")
    timing_width_rules: tuple = ("la", "param_anticipation")
    timing_widths: tuple = (32, 64, 128)
    timing_batch_k: int = 1024
    timing_width_batch_k: int = 128
    timing_repetitions: int = 120
    timing_warmup_iters: int = 20

    def replace_train(self, **kw):
        acfg = kw.pop("anticipation", self.train.anticipation)
        fields = {**asdict(self.train), **kw}
        fields.pop("anticipation", None)
        self.train = TrainConfig(anticipation=acfg, **fields)


def parse_config_text(text, source="<config>"):
    """Parse the sectioned key=value grammar, keeping line numbers."""
    sections = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            sections.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key before any [section]")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA[section]:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}' "
                              f"in [{section}]")
        sections[section][key] = (value, lineno)
    return sections


def apply_sections(cfg, sections, source="<config>"):
    train_kw = {}
    antic_kw = {}
    for section, pairs in sections.items():
        for key, (value, lineno) in pairs.items():
            target, parser = SCHEMA[section][key]
            try:
                parsed = parser(value)
            except ValueError as err:
                raise ConfigError(f"{source}:{lineno}: bad value for "
                                  f"{section}.{key}: {err}") from err
            if section == "train":
                train_kw[target] = parsed
            elif section == "anticipation":
                antic_kw[target] = parsed
            else:
                setattr(cfg, target, parsed)
    if antic_kw:
        acur = asdict(cfg.train.anticipation)
        acur.update(antic_kw)
        try:
            antic = AnticipationConfig(**acur)
        except ValueError as err:
            raise ConfigError(f"{source}: {err}") from err
        train_kw["anticipation"] = antic
    if train_kw:
        try:
            cfg.replace_train(**train_kw)
        except ValueError as err:
            raise ConfigError(f"{source}: {err}") from err
    return cfg


def apply_overrides(cfg, overrides):
    """Apply ``section.key=value`` strings on top of a config."""
    lines = []
    for ov in overrides:
        if "=" not in ov or "." not in ov.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value: {ov!r}")
        dotted, value = ov.split("=", 1)
        section, key = dotted.split(".", 1)
        lines.append(f"[{section}]\n{key} = {value}")
    text = "\n".join(lines)
    return apply_sections(cfg, parse_config_text(text, "<override>"), "<override>")


def config_to_text(cfg):
    """Canonical flat rendering (used for files and fingerprints)."""
    out = ["[run]",
           f"preset = {cfg.preset}",
           f"seeds = {','.join(str(s) for s in cfg.seeds)}",
           f"workers = {cfg.workers}",
           "", "[train]"]
    t = cfg.train
    out += [
        f"env = {t.env}",
        f"episodes = {t.episodes}",
        f"horizon = {'' if t.horizon is None else t.horizon}",
        f"gamma = {t.gamma!r}",
        f"lr = {t.lr!r}",
        f"batch_k = {t.batch_k}",
        f"buffer_capacity = {t.buffer_capacity}",
        f"tau_polyak = {t.tau_polyak!r}",
        f"warmup = {'' if t.warmup is None else t.warmup}",
        f"actor_warmup = {'' if t.actor_warmup is None else t.actor_warmup}",
        f"update_every = {t.update_every}",
        f"eval_every = {t.eval_every}",
        f"eval_episodes = {t.eval_episodes}",
        f"sigma_explore = {t.sigma_explore!r}",
        f"sigma_final = {'' if t.sigma_final is None else repr(t.sigma_final)}",
        f"gumbel_temperature = {t.gumbel_temperature!r}",
        f"logit_reg = {t.logit_reg!r}",
        f"adam_eps = {t.adam_eps!r}",
        f"hidden_dims = {','.join(str(d) for d in t.hidden_dims)}",
        f"ipd_dd_reward = {t.ipd_dd_reward!r}",
        f"shared_critic = {'' if t.shared_critic is None else t.shared_critic}",
        "", "[anticipation]",
    ]
    a = t.anticipation
    out += [
        f"rule = {a.rule}",
        f"eta_hat = {a.eta_hat!r}",
        f"reasoning_order = {a.reasoning_order}",
        f"hierarchy = {a.hierarchy}",
        f"eta_param = {a.eta_param!r}",
        f"use_alg3_scaling = {a.use_alg3_scaling}",
    ]
    return "\n".join(out) + "\n"


def fingerprint(cfg):
    """Stable identity of a run config (output path excluded)."""
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _irg(rule, eta_hat, **extra):
    # one persistent state: per-step payoff is the whole objective, so the
    # critic trains as a plain regression (gamma 0) after a warmup phase
    antic = AnticipationConfig(rule=rule, eta_hat=eta_hat, **extra)
    return TrainConfig(env="irg", episodes=900, horizon=10, batch_k=128,
                       gamma=0.0, warmup=512, actor_warmup=2000,
                       update_every=1, eval_every=50, sigma_explore=1.0,
                       sigma_final=0.3, anticipation=antic)


def _ipd(rule, eta_hat):
    return TrainConfig(env="ipd", episodes=300, horizon=150, batch_k=256,
                       warmup=1280, update_every=5, eval_every=25,
                       anticipation=AnticipationConfig(rule=rule, eta_hat=eta_hat))


def _pcg(rule, eta_hat, hierarchy="by_shaping_capacity"):
    return TrainConfig(env="pcg", episodes=100_000, horizon=25, batch_k=128,
                       warmup=1280, update_every=25, eval_every=500,
                       anticipation=AnticipationConfig(rule=rule, eta_hat=eta_hat,
                                                       hierarchy=hierarchy))


def _exitroom(rule, eta_hat):
    return TrainConfig(env="exitroom1", episodes=450, horizon=25, batch_k=256,
                       warmup=1280, update_every=5, eval_every=50,
                       anticipation=AnticipationConfig(rule=rule, eta_hat=eta_hat))


def _preset_train_configs():
    return {
        "irg-naive": _irg("naive", 0.0),
        "irg-la": _irg("la", 0.8),
        "irg-lola": _irg("lola", 0.8),
        "ipd-naive": _ipd("naive", 0.0),
        "ipd-lola": _ipd("lola", 0.3),
        "pcg-naive": _pcg("naive", 0.0),
        "pcg-hla": _pcg("hla", 0.1),
        "pcg-hla-fixed": _pcg("hla", 0.1, hierarchy="fixed_random"),
        "exitroom1-naive": _exitroom("naive", 0.0),
        "exitroom1-lola": _exitroom("lola", 1.0),
        # bases for the sweep/timing presets
        "eta-sweep": _irg("lola", 0.8),
        "latc-grid": _irg("la", 0.8),
    }


PRESETS = tuple(sorted(_preset_train_configs()))
# presets handled by a dedicated subcommand rather than plain runs
SWEEP_PRESETS = ("eta-sweep",)
TIMING_PRESETS = ("latc-grid",)


def preset_config(name):
    trains = _preset_train_configs()
    if name not in trains:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    cfg = RunConfig(preset=name, train=trains[name])
    if name == "eta-sweep":
        cfg.sweep_key = "anticipation.eta_hat"
        cfg.sweep_values = (0.1, 0.7, 1.0, 1.3)
    return cfg


def load_config(path=None, preset=None, overrides=()):
    """Resolve a RunConfig from a preset and/or file plus overrides."""
    if preset:
        cfg = preset_config(preset)
    else:
        cfg = RunConfig()
    if path:
        with open(path) as fh:
            text = fh.read()
        cfg = apply_sections(cfg, parse_config_text(text, path), path)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    if not preset and not path:
        raise ConfigError("need --preset or --config")
    return cfg
