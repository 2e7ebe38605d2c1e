"""Experiment configuration: typed sections, strict YAML parsing, stable hashing.

The config file is a YAML mapping whose top-level keys mirror
:class:`ExperimentConfig`. Missing keys take their defaults, unknown keys are
errors, and the hash is computed over the fully materialized form so that an
empty file and a file spelling out every default hash identically.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import (
    ConfigFileNotFoundError,
    ConfigSyntaxError,
    ConstraintError,
    UnknownConfigKeyError,
)

COMPETITION = "Competition"
NO_COMPETITION = "NoCompetition"
OUTPUT_DIR_ENV = "ELECTROFISH_OUTPUT_DIR"


@dataclass
class PatchSpec:
    center: tuple = (0.5, 0.5)
    radius_m: float = 0.1
    capacity: int = 8
    replenish_prob: float = 0.5

    def validate(self, key="patch"):
        _check(len(self.center) == 2, f"{key}.center", "must have two coordinates")
        _check(self.radius_m > 0, f"{key}.radius_m", "must be > 0")
        _check(self.capacity >= 0, f"{key}.capacity", "must be >= 0")
        _check(0.0 <= self.replenish_prob <= 1.0, f"{key}.replenish_prob", "must lie in [0, 1]")


def default_patches(mode):
    """Two diagonal patches; Competition gets scarce, barely replenishing food."""
    if mode == COMPETITION:
        return [PatchSpec((0.25, 0.25), 0.1, 6, 0.002), PatchSpec((0.75, 0.75), 0.1, 6, 0.002)]
    return [PatchSpec((0.25, 0.25), 0.1, 8, 0.5), PatchSpec((0.75, 0.75), 0.1, 8, 0.5)]


@dataclass
class ArenaConfig:
    width_m: float = 1.0
    height_m: float = 1.0
    dt_s: float = 0.04
    episode_len: int = 3000
    n_agents: int = 4
    competition_mode: str = NO_COMPETITION
    # None materializes to the mode's preset
    patches: typing.Optional[typing.List[PatchSpec]] = None
    bite_range_m: float = 0.1
    eat_range_m: float = 0.03
    seed: int = 0
    v_max_mps: float = 0.2
    turn_rate_max: float = math.pi
    body_length_m: float = 0.1
    body_width_m: float = 0.02
    dominance_levels: typing.List[int] = field(default_factory=lambda: [1, 2, 3])

    def __post_init__(self):
        if self.patches is None:
            self.patches = default_patches(self.competition_mode)

    def validate(self, key="arena"):
        _check(self.width_m > 0, f"{key}.width_m", "must be > 0")
        _check(self.height_m > 0, f"{key}.height_m", "must be > 0")
        _check(self.dt_s > 0, f"{key}.dt_s", "must be > 0")
        _check(self.episode_len >= 1, f"{key}.episode_len", "must be >= 1")
        _check(self.n_agents >= 1, f"{key}.n_agents", "must be >= 1")
        _check(
            self.competition_mode in (COMPETITION, NO_COMPETITION),
            f"{key}.competition_mode",
            f"must be {COMPETITION!r} or {NO_COMPETITION!r}",
        )
        _check(self.bite_range_m >= 0, f"{key}.bite_range_m", "must be >= 0")
        _check(self.eat_range_m >= 0, f"{key}.eat_range_m", "must be >= 0")
        _check(self.v_max_mps >= 0, f"{key}.v_max_mps", "must be >= 0")
        _check(self.turn_rate_max >= 0, f"{key}.turn_rate_max", "must be >= 0")
        _check(self.body_length_m > 0, f"{key}.body_length_m", "must be > 0")
        _check(self.body_width_m > 0, f"{key}.body_width_m", "must be > 0")
        _check(len(self.dominance_levels) >= 1, f"{key}.dominance_levels", "must be non-empty")
        _check(all(d > 0 for d in self.dominance_levels), f"{key}.dominance_levels", "must be positive")
        for i, p in enumerate(self.patches):
            p.validate(f"{key}.patches[{i}]")


@dataclass
class FieldConfig:
    r_min_m: float = 0.02
    k_wall: float = 1.0
    background_amp: float = 1.0
    # 0 disables the slow modulation
    background_period_s: float = 2.0
    eod_moment_per_dominance: float = 1.0
    food_radius_m: float = 0.01
    food_polarizability: float = 1.0

    def validate(self, key="efield"):
        _check(self.r_min_m > 0, f"{key}.r_min_m", "must be > 0")
        _check(math.isfinite(self.k_wall), f"{key}.k_wall", "must be finite")
        _check(self.background_period_s >= 0, f"{key}.background_period_s", "must be >= 0")
        _check(self.food_radius_m > 0, f"{key}.food_radius_m", "must be > 0")


@dataclass
class SensorLayout:
    n_mormyromast: int = 20
    n_ampullary: int = 8
    n_knollenorgan_bins: int = 12
    knollenorgan_range_m: float = 0.5
    knollenorgan_enabled: bool = True
    collective_sensing_enabled: bool = True
    noise_frac: float = 0.01
    ampullary_tau_s: float = 0.2
    mormyromast_scale: float = 10.0
    knollenorgan_scale: float = 1.0

    def validate(self, key="sensors"):
        _check(self.n_mormyromast >= 1, f"{key}.n_mormyromast", "must be >= 1")
        _check(self.n_ampullary >= 1, f"{key}.n_ampullary", "must be >= 1")
        _check(self.n_knollenorgan_bins >= 1, f"{key}.n_knollenorgan_bins", "must be >= 1")
        _check(self.knollenorgan_range_m >= 0, f"{key}.knollenorgan_range_m", "must be >= 0")
        _check(self.noise_frac >= 0, f"{key}.noise_frac", "must be >= 0")
        _check(self.ampullary_tau_s > 0, f"{key}.ampullary_tau_s", "must be > 0")
        _check(self.mormyromast_scale > 0, f"{key}.mormyromast_scale", "must be > 0")
        _check(self.knollenorgan_scale > 0, f"{key}.knollenorgan_scale", "must be > 0")

    @property
    def n_proprio(self):
        # speed, sin, cos, eod, dominance, 4 wall distances
        return 9

    @property
    def block_sizes(self):
        kn = self.n_knollenorgan_bins if self.knollenorgan_enabled else 0
        return {
            "mormyromast": self.n_mormyromast,
            "ampullary": self.n_ampullary,
            "knollenorgan": kn,
            "proprio": self.n_proprio,
        }

    @property
    def obs_dim(self):
        return sum(self.block_sizes.values())

    def block_slices(self):
        out, start = {}, 0
        for name, n in self.block_sizes.items():
            out[name] = slice(start, start + n)
            start += n
        return out

    def layout_dict(self):
        """The part of the layout a checkpoint must agree with."""
        return {"blocks": [[k, v] for k, v in self.block_sizes.items()], "obs_dim": self.obs_dim}


@dataclass
class RewardConfig:
    r_food: float = 1.0
    c_eod: float = 0.01
    p_small: float = 0.1
    p_big: float = 1.0

    def validate(self, key="rewards"):
        _check(self.c_eod >= 0, f"{key}.c_eod", "must be >= 0")
        _check(self.p_small >= 0, f"{key}.p_small", "must be >= 0")
        _check(self.p_big >= 0, f"{key}.p_big", "must be >= 0")


@dataclass
class PolicyConfig:
    hidden_dim: int = 64
    init_log_std: float = 0.0

    def validate(self, key="policy"):
        _check(self.hidden_dim >= 1, f"{key}.hidden_dim", "must be >= 1")


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    segment_len: int = 32
    rollout_len: int = 128
    n_minibatches: int = 4
    lr: float = 3e-4
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_env_steps: int = 2_000_000
    n_envs: int = 8
    metrics_every: int = 10
    checkpoint_every: int = 50
    determinism: str = "strict"
    centralized_critic: bool = False

    def validate(self, key="training"):
        _check(0.0 <= self.gamma <= 1.0, f"{key}.gamma", "must lie in [0, 1]")
        _check(0.0 <= self.lam <= 1.0, f"{key}.lam", "must lie in [0, 1]")
        _check(self.clip_eps > 0, f"{key}.clip_eps", "must be > 0")
        _check(self.epochs >= 1, f"{key}.epochs", "must be >= 1")
        _check(self.segment_len >= 1, f"{key}.segment_len", "must be >= 1")
        _check(self.rollout_len >= 1, f"{key}.rollout_len", "must be >= 1")
        _check(self.rollout_len % self.segment_len == 0, f"{key}.segment_len", "must divide rollout_len")
        _check(self.n_minibatches >= 1, f"{key}.n_minibatches", "must be >= 1")
        _check(self.lr >= 0, f"{key}.lr", "must be >= 0")
        _check(self.max_grad_norm > 0, f"{key}.max_grad_norm", "must be > 0")
        _check(self.total_env_steps >= 1, f"{key}.total_env_steps", "must be >= 1")
        _check(self.n_envs >= 1, f"{key}.n_envs", "must be >= 1")
        _check(self.metrics_every >= 1, f"{key}.metrics_every", "must be >= 1")
        _check(self.checkpoint_every >= 1, f"{key}.checkpoint_every", "must be >= 1")
        _check(self.determinism in ("strict", "fast"), f"{key}.determinism", "must be 'strict' or 'fast'")


@dataclass
class AssayConfig:
    patch_center: tuple = (0.5, 0.5)
    patch_radius_m: float = 0.1
    dominance_pairs: typing.List[typing.List[int]] = field(
        default_factory=lambda: [[a, b] for a in (1, 2, 3) for b in (1, 2, 3)]
    )
    n_trials: int = 100
    max_steps: int = 250
    # 0 means: use sensors.knollenorgan_range_m
    comm_radius_m: float = 0.0
    grid_n: int = 4
    seed: int = 0

    def validate(self, key="assay"):
        _check(self.n_trials >= 1, f"{key}.n_trials", "must be >= 1")
        _check(self.max_steps >= 1, f"{key}.max_steps", "must be >= 1")
        _check(self.patch_radius_m > 0, f"{key}.patch_radius_m", "must be > 0")
        _check(self.grid_n >= 1, f"{key}.grid_n", "must be >= 1")
        for i, pair in enumerate(self.dominance_pairs):
            _check(len(pair) == 2 and all(d > 0 for d in pair), f"{key}.dominance_pairs[{i}]",
                   "must be two positive levels")


@dataclass
class SimConfig:
    """Everything a single environment needs to step."""

    arena: ArenaConfig = field(default_factory=ArenaConfig)
    efield: FieldConfig = field(default_factory=FieldConfig)
    sensors: SensorLayout = field(default_factory=SensorLayout)
    rewards: RewardConfig = field(default_factory=RewardConfig)


@dataclass
class ExperimentConfig:
    arena: ArenaConfig = field(default_factory=ArenaConfig)
    efield: FieldConfig = field(default_factory=FieldConfig)
    sensors: SensorLayout = field(default_factory=SensorLayout)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    assay: AssayConfig = field(default_factory=AssayConfig)
    output_dir: str = "runs"
    seed: int = 0

    def validate(self):
        for name in ("arena", "efield", "sensors", "rewards", "policy", "training", "assay"):
            getattr(self, name).validate(name)
        _check(self.training.segment_len <= self.training.rollout_len, "training.segment_len",
               "must not exceed rollout_len")

    @property
    def sim(self):
        return SimConfig(self.arena, self.efield, self.sensors, self.rewards)

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    @property
    def hash(self):
        return config_hash(self)

    def resolved_output_dir(self):
        return Path(os.environ.get(OUTPUT_DIR_ENV) or self.output_dir)


def _check(ok, key, message):
    if not ok:
        raise ConstraintError(key, message)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_hash(cfg):
    """sha256 hex digest over the canonical JSON of the materialized config."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(tp, value, key):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(inner, value, key)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, key)
    if origin in (list, typing.List):
        if not isinstance(value, list):
            raise ConstraintError(key, f"expected a list, got {type(value).__name__}")
        sub = args[0] if args else typing.Any
        return [_coerce(sub, v, f"{key}[{i}]") for i, v in enumerate(value)]
    if tp is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConstraintError(key, "expected a sequence")
        return tuple(float(v) for v in value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConstraintError(key, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConstraintError(key, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConstraintError(key, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConstraintError(key, f"expected a string, got {value!r}")
        return value
    return value


def _build(cls, data, prefix):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConstraintError(prefix or "<root>", "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for k in data:
        if k not in names:
            raise UnknownConfigKeyError(f"{prefix}.{k}" if prefix else str(k), "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            key = f"{prefix}.{f.name}" if prefix else f.name
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], key)
    return cls(**kwargs)


def config_from_dict(data):
    cfg = _build(ExperimentConfig, data, "")
    cfg.validate()
    return cfg


def parse_config(path):
    """Read, strictly validate, and materialize an experiment config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigFileNotFoundError(str(path), "config file not found")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigSyntaxError(str(path), f"syntax error: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg):
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)


def write_config(cfg, path):
    path = Path(path)
    path.write_text(dump_config(cfg))
    return path


def as_experiment_config(cfg):
    """Accept an ExperimentConfig, a plain dict, or a config file path."""
    if isinstance(cfg, ExperimentConfig):
        return cfg
    if isinstance(cfg, dict):
        return config_from_dict(cfg)
    return parse_config(cfg)
