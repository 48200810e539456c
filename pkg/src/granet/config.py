"""Run configuration: profile defaults, key=value file loading, validation."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path

import tomli

log = logging.getLogger("granet")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    profile: str = "paper"
    seed: int = 0
    # scene and graph sizes
    num_points: int = 12000
    knn_k: int = 32
    hops: int = 4
    embed_dim: int = 64
    resample: int = 7000
    n_obj: int = 2048
    n_val: int = 512
    dov_levels: int = 10
    fps_seed_index: int = 0
    # grasp parameterization
    views: int = 300
    angle_bins: int = 12
    depth_bins: tuple[float, ...] = (0.01, 0.02, 0.03, 0.04)
    w_max: float = 0.1
    cylinder_radius: float = 0.05
    cylinder_depth_lo: float = -0.02
    cylinder_depth_hi: float = 0.04
    cylinder_points: int = 64
    # training
    lambda_gps: float = 0.5
    lambda_view: float = 0.3
    lambda_grasp: float = 0.2
    epochs: int = 10
    batch_size: int = 2
    lr: float = 1e-3
    lr_decayed: float = 5e-4
    lr_decay_after: int = 8
    match_radius: float = 0.005
    # evaluation
    eval_k: int = 50
    nms_translation: float = 0.03
    nms_rotation_deg: float = 30.0
    # annotation
    max_grasps_per_point: int = 24
    # paths
    scenes_dir: str = "scenes"
    checkpoint: str = "model.grnt"
    report: str = "report.json"

    def replace(self, **kw) -> "RunConfig":
        return validate(dataclasses.replace(self, **kw))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["depth_bins"] = list(self.depth_bins)
        return d

    def dumps(self) -> str:
        """Effective config as loadable key = value text."""
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, str):
                lines.append(f'{k} = "{v}"')
            elif isinstance(v, list):
                lines.append(f"{k} = [{', '.join(repr(x) for x in v)}]")
            else:
                lines.append(f"{k} = {v!r}")
        return "\n".join(lines) + "\n"


PROFILE_DEFAULTS = {
    "paper": {},
    "desk": {"num_points": 2048, "resample": 1024, "n_obj": 512, "n_val": 128},
}

_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}

# (key, lower bound, upper bound or None)
_RANGES = [
    ("num_points", 2, None), ("knn_k", 1, None), ("hops", 1, None), ("embed_dim", 1, None),
    ("resample", 2, None), ("n_obj", 1, None), ("n_val", 1, None), ("dov_levels", 2, None),
    ("fps_seed_index", 0, None), ("views", 1, None), ("angle_bins", 1, None),
    ("w_max", 1e-12, None), ("cylinder_radius", 1e-12, None), ("cylinder_points", 1, None),
    ("lambda_gps", 0.0, None), ("lambda_view", 0.0, None), ("lambda_grasp", 0.0, None),
    ("epochs", 1, None), ("batch_size", 1, None), ("lr", 0.0, None), ("lr_decayed", 0.0, None),
    ("lr_decay_after", 0, None), ("match_radius", 0.0, None), ("eval_k", 1, None),
    ("nms_translation", 0.0, None), ("nms_rotation_deg", 0.0, 180.0),
    ("max_grasps_per_point", 0, None), ("seed", 0, 2 ** 64 - 1),
]


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.profile not in PROFILE_DEFAULTS:
        raise ConfigError(f"profile: must be one of {sorted(PROFILE_DEFAULTS)}, got {cfg.profile!r}")
    for key, lo, hi in _RANGES:
        v = getattr(cfg, key)
        if v < lo or (hi is not None and v > hi):
            bound = f">= {lo}" if hi is None else f"in [{lo}, {hi}]"
            raise ConfigError(f"{key}: value {v!r} out of range (must be {bound})")
    if not cfg.depth_bins or any(d <= 0 for d in cfg.depth_bins):
        raise ConfigError("depth_bins: need at least one positive depth")
    if cfg.cylinder_depth_lo >= cfg.cylinder_depth_hi:
        raise ConfigError("cylinder_depth_lo: must be below cylinder_depth_hi")
    if cfg.resample > cfg.num_points:
        raise ConfigError(f"resample: {cfg.resample} exceeds num_points {cfg.num_points}")
    if cfg.knn_k >= cfg.resample:
        raise ConfigError(f"knn_k: {cfg.knn_k} must be below resample {cfg.resample}")
    return cfg


def _coerce(key: str, value):
    f = _FIELDS[key]
    default = f.default
    if key == "depth_bins":
        if not isinstance(value, list) or not all(isinstance(x, (int, float)) for x in value):
            raise ConfigError("depth_bins: expected a list of numbers")
        return tuple(float(x) for x in value)
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{key}: booleans are not accepted")
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


def make_config(values: dict | None = None, profile: str | None = None) -> RunConfig:
    """Profile defaults overlaid with ``values``; ``profile`` overrides the file's choice."""
    values = dict(values or {})
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    name = profile or values.get("profile", "paper")
    if name not in PROFILE_DEFAULTS:
        raise ConfigError(f"profile: must be one of {sorted(PROFILE_DEFAULTS)}, got {name!r}")
    merged = {**PROFILE_DEFAULTS[name], **{k: _coerce(k, v) for k, v in values.items()}}
    merged["profile"] = name
    return validate(RunConfig(**merged))


def load_config(path, profile: str | None = None, echo: bool = True) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        values = tomli.loads(p.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {p}: {exc}") from None
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"unknown config key {nested[0]!r} (tables are not supported)")
    cfg = make_config(values, profile)
    if echo:
        log.info("effective config:\n%s", cfg.dumps())
    return cfg

