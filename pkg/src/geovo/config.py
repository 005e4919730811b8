"""Flat JSON run configuration shared by every CLI command.

Precedence, lowest to highest: built-in defaults, the ``--config`` file,
command-line flags. Every command writes the resolved result to
``config.json`` next to its outputs, so a run can be repeated exactly with
``--config <out>/config.json``.
"""

from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .p3p import RansacConfig
from .pipeline import PipelineConfig
from .se3 import Intrinsics
from .synthetic import SceneSpec


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str | None = None
    input: str | None = None
    # camera
    width: int = 128
    height: int = 96
    focal: float = 100.0
    cx: float | None = None
    cy: float | None = None
    # synthetic scene
    dense: bool = True
    n_points: int = 3000
    depth_min: float = 2.0
    depth_max: float = 10.0
    max_rotation_deg: float = 5.0
    min_rotation_deg: float = 0.0
    max_translation: float = 0.5
    min_translation: float = 0.2
    outliers: float = 0.0
    noise_px: float = 0.0
    write_opv: bool = False
    k: int = 4
    # correspondence screening
    fb_alpha1: float = 0.01
    fb_alpha2: float = 0.5
    so_eps: float = 1e-3
    top_fraction: float = 0.2
    f_count: int = 3000
    fundamental_ransac: bool = False
    max_ray_angle_deg: float = 1.0
    n_samples: int = 3000
    use_masks: bool = True
    # pose initialisation
    init: str = "p3p"
    ransac_iterations: int = 100
    ransac_threshold: float = 1.0
    ransac_min_inlier_ratio: float = 0.2
    # bundle adjustment
    huber_delta: float = 1.0
    robust: bool = True
    lambda_min: float = 1.0
    lambda_max: float = 1e4
    sigma: float = 5.0
    wd: float = 1.0
    lm_iterations: int = 30
    lm_policy: str = "accept_reject"
    # file inputs
    flow_fwd: str | None = None
    flow_bwd: str | None = None
    inv_depth: str | None = None
    correspondences: str | None = None
    opv: str | None = None
    est: str | None = None
    gt: str | None = None
    # evaluation
    align: str = "similarity"
    segment_lengths: list = field(default_factory=lambda: [100, 200, 300, 400, 500, 600, 700, 800])
    eval_step: int = 1
    # noise sweep
    sweep_mode: str = "geometric"
    noise_model: str = "paired"
    noise_levels: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 3.0])
    strides: list = field(default_factory=lambda: [1, 2, 3])
    sweep_seeds: int = 5
    n_steps: int = 10
    step_length: float = 0.5

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    # derived objects

    def intrinsics(self) -> Intrinsics:
        cx = (self.width - 1) / 2.0 if self.cx is None else self.cx
        cy = (self.height - 1) / 2.0 if self.cy is None else self.cy
        return Intrinsics(self.focal, self.focal, cx, cy, self.width, self.height)

    def scene_spec(self, seed: int | None = None) -> SceneSpec:
        return SceneSpec(
            seed=self.seed if seed is None else seed,
            n_points=self.n_points,
            intrinsics=self.intrinsics(),
            depth_range=(self.depth_min, self.depth_max),
            pose_magnitude=(np.deg2rad(self.max_rotation_deg), self.max_translation),
            pose_minimum=(np.deg2rad(self.min_rotation_deg), self.min_translation),
            outlier_fraction=self.outliers,
            noise_sigma_px=self.noise_px,
        )

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(
            fb_alpha1=self.fb_alpha1,
            fb_alpha2=self.fb_alpha2,
            so_eps=self.so_eps,
            top_fraction=self.top_fraction,
            f_count=self.f_count,
            fundamental_ransac=self.fundamental_ransac,
            cos_max=float(np.cos(np.deg2rad(self.max_ray_angle_deg))),
            n_samples=self.n_samples,
            use_masks=self.use_masks,
            ransac=RansacConfig(
                self.ransac_iterations, self.ransac_threshold, self.ransac_min_inlier_ratio, self.seed
            ),
            init=self.init,
            huber_delta=self.huber_delta,
            robust=self.robust,
            lambda_bounds=(self.lambda_min, self.lambda_max),
            sigma=self.sigma,
            w_d=self.wd,
            lm_iterations=self.lm_iterations,
            lm_policy=self.lm_policy,
            seed=self.seed,
        )


_CHOICES = {
    "init": ("p3p", "identity"),
    "lm_policy": ("accept_reject", "unconditional"),
    "align": ("none", "rigid", "similarity"),
    "sweep_mode": ("geometric", "stride"),
    "noise_model": ("paired", "forward"),
}


def _field_kind(name: str) -> str:
    default = _DEFAULTS[name]
    if isinstance(default, bool):
        return "bool"
    if isinstance(default, int):
        return "int"
    if isinstance(default, float):
        return "float"
    if isinstance(default, list):
        return "list"
    if name in ("cx", "cy"):
        return "optional_float"
    return "str"


def _coerce(name: str, value):
    kind = _field_kind(name)
    if kind == "optional_float":
        if value is None:
            return None
        kind = "float"
    if kind == "str":
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ConfigError(f"{name}: expected a list of numbers, got {value!r}")
    return list(value)


def validate(cfg: RunConfig) -> None:
    for name, allowed in _CHOICES.items():
        if getattr(cfg, name) not in allowed:
            raise ConfigError(f"{name} must be one of {', '.join(allowed)}")
    positive = ["width", "height", "focal", "n_points", "depth_min", "f_count", "n_samples", "k",
                "ransac_iterations", "ransac_threshold", "huber_delta", "lambda_min", "sigma",
                "sweep_seeds", "n_steps", "step_length", "eval_step"]
    for name in positive:
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive")
    non_negative = ["max_rotation_deg", "min_rotation_deg", "max_translation", "min_translation",
                    "noise_px", "fb_alpha1", "fb_alpha2", "so_eps", "wd", "lm_iterations"]
    for name in non_negative:
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be non-negative")
    if cfg.depth_max < cfg.depth_min:
        raise ConfigError("depth_max must not be below depth_min")
    if cfg.lambda_max < cfg.lambda_min:
        raise ConfigError("lambda_max must not be below lambda_min")
    if cfg.min_rotation_deg > cfg.max_rotation_deg or cfg.min_translation > cfg.max_translation:
        raise ConfigError("pose minimum exceeds pose magnitude")
    if not 0 < cfg.top_fraction <= 1:
        raise ConfigError("top_fraction must lie in (0, 1]")
    if not 0 <= cfg.outliers < 1:
        raise ConfigError("outliers must lie in [0, 1)")
    if not 0 <= cfg.ransac_min_inlier_ratio <= 1:
        raise ConfigError("ransac_min_inlier_ratio must lie in [0, 1]")
    if not 0 < cfg.max_ray_angle_deg < 90:
        raise ConfigError("max_ray_angle_deg must lie in (0, 90)")
    if not cfg.segment_lengths or min(cfg.segment_lengths) <= 0:
        raise ConfigError("segment_lengths must be positive")
    if not cfg.noise_levels or min(cfg.noise_levels) < 0:
        raise ConfigError("noise_levels must be non-negative")
    if not cfg.strides or any(int(s) != s or s < 1 for s in cfg.strides):
        raise ConfigError("strides must be positive integers")


_DEFAULTS = {f.name: f.default if f.default_factory is MISSING else f.default_factory() for f in fields(RunConfig)}
KEYS = tuple(_DEFAULTS)


def from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = sorted(set(data) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    values = {name: _coerce(name, value) for name, value in data.items()}
    base = base or RunConfig()
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return from_dict(data)


def parse_flag(name: str, text: str):
    """Turn a command-line string into the value type of config key ``name``."""
    kind = _field_kind(name)
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "optional_float":
            return None if text.lower() in ("none", "null") else float(text)
        if kind == "list":
            return [float(v) if any(c in v for c in ".eE") else int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"--{name.replace('_', '-')}: cannot parse {text!r}") from exc
    return text
