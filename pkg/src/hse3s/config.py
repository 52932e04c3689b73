"""Run configuration: plain-text (INI-style key = value) files, canonical
serialization, and the config hash embedded in every output artifact."""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Invalid or missing configuration; the message names the field."""


@dataclass
class RunConfig:
    task: str
    seed: int = 0
    out_dir: str = "runs/default"
    # rounds
    rounds: int = 30
    episodes_per_round: int = 2000
    sgd_iters_per_round: int = 3000
    # world
    min_objects: int = -1          # -1: task default
    max_objects: int = -1
    friction_half_angle_deg: float = 10.0
    render_resolution: int = 160
    # sampler
    n_samples: int = 64
    eval_n_samples: int = 100
    n_trials: int = 1
    detect_threshold: float = 0.5
    # approximator
    lr: float = 1e-3
    lr_decay_steps: int = 2000
    batch_size: int = 32
    buffer_capacity: int = 50_000
    # exploration
    eps_floor: float = 0.05
    eps_decay_rounds: int = 25
    eps_zero_tail: int = 5
    place_target: int = 5000
    workers: int = 1

    def spawn_kwargs(self) -> dict:
        import math

        from .world import GripperConfig

        kw = {"render_resolution": self.render_resolution}
        if self.min_objects >= 0:
            kw["min_objects"] = self.min_objects
        if self.max_objects >= 0:
            kw["max_objects"] = self.max_objects
        if self.friction_half_angle_deg != 10.0:
            kw["gripper_cfg"] = GripperConfig(
                friction_half_angle=math.radians(self.friction_half_angle_deg))
        return kw


_SECTIONS = {
    "run": ("task", "seed", "out_dir"),
    "rounds": ("rounds", "episodes_per_round", "sgd_iters_per_round"),
    "world": ("min_objects", "max_objects", "friction_half_angle_deg",
              "render_resolution"),
    "sampler": ("n_samples", "eval_n_samples", "n_trials", "detect_threshold"),
    "approximator": ("lr", "lr_decay_steps", "batch_size", "buffer_capacity"),
    "exploration": ("eps_floor", "eps_decay_rounds", "eps_zero_tail",
                    "place_target"),
    "execution": ("workers",),
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_VALID_TASKS = ("blocks", "mugs", "bottles")


def _parse_value(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError("field %r has invalid value %r" % (name, raw))


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("unparseable config: %s" % exc)
    values = {}
    known = {name for names in _SECTIONS.values() for name in names}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError("unknown section [%s]" % section)
        for name, raw in cp.items(section):
            if name not in known:
                raise ConfigError("unknown field %r in [%s]" % (name, section))
            if name not in _SECTIONS[section]:
                raise ConfigError("field %r does not belong in [%s]"
                                  % (name, section))
            values[name] = _parse_value(name, raw)
    if "task" not in values:
        raise ConfigError("missing required field 'task' in [run]")
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if cfg.task not in _VALID_TASKS:
        raise ConfigError("field 'task' must be one of %s, got %r"
                          % (", ".join(_VALID_TASKS), cfg.task))
    for name in ("rounds", "episodes_per_round", "sgd_iters_per_round",
                 "n_samples", "eval_n_samples", "n_trials", "batch_size",
                 "buffer_capacity", "workers"):
        if getattr(cfg, name) < 1:
            raise ConfigError("field %r must be >= 1" % name)
    if cfg.lr <= 0:
        raise ConfigError("field 'lr' must be positive")
    if cfg.eps_zero_tail > cfg.rounds:
        raise ConfigError("field 'eps_zero_tail' exceeds 'rounds'")


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse_config(f.read())
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc))


def canonical_text(cfg: RunConfig) -> str:
    """Deterministic serialization; hashing input and on-disk copy."""
    out = io.StringIO()
    for section in sorted(_SECTIONS):
        out.write("[%s]\n" % section)
        for name in sorted(_SECTIONS[section]):
            value = getattr(cfg, name)
            if isinstance(value, float):
                out.write("%s = %.17g\n" % (name, value))
            else:
                out.write("%s = %s\n" % (name, value))
        out.write("\n")
    return out.getvalue()


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_text(cfg).encode()).hexdigest()[:12]


def hash_of_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:12]
