"""Run configuration for the command-line pipeline.

A config is a JSON object with ``"version": 1``. Every key is optional
except ``version``; unknown keys anywhere are an error.

    {
      "version": 1,
      "seed": 7,
      "scenes": {"count": 2, "duration_s": 2.0, "t60": [0.34, 0.46]},
      "geometries": ["G1", "G4"],
      "alphas": [0.0, 1.0],
      "methods": ["passthrough", "lbh", "mif", "toy"],
      "train": {"steps": 200, "model": {"hidden": 32}}
    }
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .geometry import resolve_geometry

CONFIG_VERSION = 1
METHODS = ("passthrough", "lbh", "mif", "toy", "target")
METRICS = ("mw_ipde", "mw_ilde", "msi_sdr")


@dataclass(frozen=True)
class GeneratorConfig:
    """Seeded random scenes; scene ``i`` is identical on every geometry."""
    count: int = 2
    duration_s: float = 2.0
    t60: tuple = (0.34, 0.46)
    sar_db: float | None = 10.0
    snr_db: float | None = 25.0
    moving: bool = True
    n_segments: int = 5
    radius_m: tuple = (1.0, 1.5)
    ambient_mode: str = "shared"
    anechoic: bool = False


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 32
    film_hidden: int = 8
    df_bins: int = 64
    order: int = 2
    lookahead: int = 0


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 1e-3
    scenes: int = 1  # first N synthesized runs are the training set
    eval_every: int = 25
    patience: int = 3
    clip_norm: float = 3.0
    model: ModelConfig = field(default_factory=ModelConfig)


@dataclass(frozen=True)
class RunConfig:
    version: int = CONFIG_VERSION
    seed: int = 0
    out: str = "run"
    jobs: int = 1
    scenes: GeneratorConfig | None = field(default_factory=GeneratorConfig)
    scene_files: tuple = ()
    geometries: tuple = ("G1",)
    alphas: tuple = (0.0, 1.0)
    methods: tuple = ("passthrough", "lbh", "mif")
    metrics: tuple = METRICS
    sdr_convention: str = "squared"
    n_bands: int = 32
    mif_reg: float = 1e-4
    hrtf: str | None = None
    checkpoint: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {
    (RunConfig, "scenes"): GeneratorConfig,
    (RunConfig, "train"): TrainConfig,
    (TrainConfig, "model"): ModelConfig,
}


def _build(cls, obj, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - names)
    if unknown:
        raise ConfigError(f"unknown field(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in obj.items():
        sub = _NESTED.get((cls, key))
        if sub is not None and value is not None:
            value = _build(sub, value, f"{where}.{key}" if where else key)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


def validate(cfg: RunConfig) -> RunConfig:
    """Check types, ranges and referenced files. Raises ConfigError."""
    _check(cfg.version == CONFIG_VERSION, f"unsupported config version {cfg.version!r}")
    _check(_is_int(cfg.seed) and 0 <= cfg.seed < 2 ** 64, "seed must be an unsigned 64-bit integer")
    _check(_is_int(cfg.jobs) and cfg.jobs >= 1, "jobs must be a positive integer")
    _check(isinstance(cfg.out, str) and cfg.out != "", "out must be a directory path")

    g = cfg.scenes
    if g is not None:
        _check(_is_int(g.count) and g.count >= 0, "scenes.count must be a non-negative integer")
        _check(_is_num(g.duration_s) and g.duration_s >= 0.1, "scenes.duration_s must be >= 0.1")
        _check(len(g.t60) > 0 and all(_is_num(t) and t > 0 for t in g.t60),
               "scenes.t60 must be a non-empty list of positive values")
        for name in ("sar_db", "snr_db"):
            v = getattr(g, name)
            _check(v is None or _is_num(v), f"scenes.{name} must be a number or null")
        _check(isinstance(g.moving, bool) and isinstance(g.anechoic, bool),
               "scenes.moving / scenes.anechoic must be booleans")
        _check(_is_int(g.n_segments) and g.n_segments >= 1, "scenes.n_segments must be >= 1")
        _check(len(g.radius_m) == 2 and all(_is_num(r) and r > 0 for r in g.radius_m)
               and g.radius_m[0] <= g.radius_m[1], "scenes.radius_m must be [min, max]")
        _check(g.ambient_mode in ("shared", "independent"),
               "scenes.ambient_mode must be 'shared' or 'independent'")

    for p in cfg.scene_files:
        _check(isinstance(p, str) and Path(p).is_file(), f"scene file not found: {p}")
    _check((g is not None and g.count > 0) or cfg.scene_files, "config defines no scenes")

    _check(len(cfg.geometries) > 0, "geometries must not be empty")
    _check(len(set(cfg.geometries)) == len(cfg.geometries), "duplicate geometry")
    for name in cfg.geometries:
        try:
            resolve_geometry(name)
        except ConfigError:
            raise
        except (OSError, ValueError) as exc:
            raise ConfigError(f"geometry {name!r}: {exc}") from exc

    _check(len(cfg.alphas) > 0, "alphas must not be empty")
    _check(all(_is_num(a) and 0.0 <= a <= 1.0 for a in cfg.alphas), "alpha values must lie in [0, 1]")
    _check(len({alpha_tag(a) for a in cfg.alphas}) == len(cfg.alphas), "duplicate alpha")
    _check(len(cfg.methods) > 0 and all(m in METHODS for m in cfg.methods),
           f"methods must be drawn from {list(METHODS)}")
    _check(len(set(cfg.methods)) == len(cfg.methods), "duplicate method")
    _check(len(cfg.metrics) > 0 and all(m in METRICS for m in cfg.metrics),
           f"metrics must be drawn from {list(METRICS)}")
    _check(cfg.sdr_convention in ("squared", "standard"), "sdr_convention must be 'squared' or 'standard'")
    _check(_is_int(cfg.n_bands) and 1 <= cfg.n_bands <= 257, "n_bands must be in [1, 257]")
    _check(_is_num(cfg.mif_reg) and cfg.mif_reg >= 0, "mif_reg must be non-negative")
    if cfg.hrtf is not None:
        _check(isinstance(cfg.hrtf, str) and Path(cfg.hrtf).is_file(), f"HRTF manifest not found: {cfg.hrtf}")
    _check(cfg.checkpoint is None or isinstance(cfg.checkpoint, str), "checkpoint must be a path")

    t = cfg.train
    _check(_is_int(t.steps) and t.steps >= 1, "train.steps must be >= 1")
    _check(_is_num(t.lr) and t.lr > 0, "train.lr must be positive")
    _check(_is_int(t.scenes) and t.scenes >= 1, "train.scenes must be >= 1")
    _check(_is_int(t.eval_every) and t.eval_every >= 0, "train.eval_every must be >= 0")
    _check(_is_int(t.patience) and t.patience >= 1, "train.patience must be >= 1")
    _check(_is_num(t.clip_norm) and t.clip_norm >= 0, "train.clip_norm must be >= 0")
    m = t.model
    for name in ("hidden", "film_hidden", "df_bins"):
        _check(_is_int(getattr(m, name)) and getattr(m, name) >= 1, f"train.model.{name} must be >= 1")
    _check(m.df_bins <= 257, "train.model.df_bins must be <= 257")
    _check(_is_int(m.order) and m.order >= 0, "train.model.order must be >= 0")
    _check(_is_int(m.lookahead) and 0 <= m.lookahead <= m.order,
           "train.model.lookahead must be within [0, order]")
    return cfg


def alpha_tag(alpha: float) -> str:
    """Filename-safe alpha label, e.g. 0.3 -> '0.3', 1.0 -> '1'."""
    return format(float(alpha), "g")


def load_config(path=None, *, seed=None, out=None, jobs=None) -> RunConfig:
    """Parse and validate; command-line overrides win over file values."""
    obj = {"version": CONFIG_VERSION}
    if path is not None:
        try:
            obj = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(obj, dict) or "version" not in obj:
            raise ConfigError("config needs a top-level 'version' field")
    try:
        cfg = _build(RunConfig, obj, "")
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    overrides = {k: v for k, v in (("seed", seed), ("out", out), ("jobs", jobs)) if v is not None}
    cfg = dataclasses.replace(cfg, **overrides)
    try:
        return validate(cfg)
    except TypeError as exc:  # e.g. a number where a list belongs
        raise ConfigError(f"malformed config value: {exc}") from exc


def check_writable(directory) -> Path:
    """Create ``directory`` if needed and confirm it accepts files."""
    d = Path(directory)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {d}: {exc.strerror}") from exc
    if not d.is_dir() or not os.access(d, os.W_OK):
        raise ConfigError(f"output directory {d} is not writable")
    return d
