"""Run configuration: one flat JSON object, every key also a CLI flag."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .completion import DEFAULT_T, MirrorCompleterConfig
from .errors import CloudIOError, ConfigError, ParseError
from .gripper import DEFAULT_K_GENERATE, GripperModel, SamplerConfig
from .rescore import W_U_UNIT, W_U_UNNORMALIZED, RescoreConfig

DEFAULT_K_EXECUTE = 5

GRIPPER_SOURCE = (
    "Robotiq 2F-85: 85 mm stroke (vendor datasheet); pad depth 37 mm and width 22 mm "
    "from the vendor finger drawing, not re-measured"
)

HELP = {
    "T": "stochastic completion passes per ensemble",
    "W_u": "uncertainty weight (1e5 for unnormalized scores, 0.1 for unit scores)",
    "k_generate": "grasp candidates sampled per scene",
    "k_execute": "top-ranked grasps judged per trial",
    "seed": "master seed; every stage seed derives from it",
    "threads": "worker threads (0 = library default)",
    "backend": "completion backend: mirror | files",
    "penalty_mode": "sum (literal) or mean of cropped stds",
    "score_mode": "sampler score scale: unnormalized | unit",
    "partial_max_points": "partial is downsampled to at most this many points",
    "output_size": "points per completed cloud",
    "dropout_rate": "mirror completer dropout probability",
    "perturbation_scale": "mirror completer control-vector length (m)",
    "min_gain": "mirror completer perturbation gain next to observed points",
    "far_side_bias": "mirror completer shift of the hidden side away from the camera (m)",
    "plane_distance_tol": "table RANSAC inlier distance (m)",
    "plane_min_inliers": "table RANSAC minimum inliers",
    "ransac_iterations": "table RANSAC iterations",
    "oracle_min_points": "success oracle: minimum ground-truth points between the pads",
    "friction_deg": "success oracle: friction cone half-angle (deg)",
    "axis_align_deg": "success oracle: contact line vs closing axis tolerance (deg)",
}


@dataclass
class PipelineConfig:
    T: int = DEFAULT_T
    W_u: float = W_U_UNNORMALIZED
    k_generate: int = DEFAULT_K_GENERATE
    k_execute: int = DEFAULT_K_EXECUTE
    seed: int = 0
    threads: int = 0
    backend: str = "mirror"
    penalty_mode: str = "sum"
    score_mode: str = "unnormalized"
    partial_max_points: int = 1024
    output_size: int = 2048
    dropout_rate: float = 0.5
    perturbation_scale: float = 0.004
    min_gain: float = 0.7
    far_side_bias: float = 0.0
    plane_distance_tol: float = 0.001
    plane_min_inliers: int = 100
    ransac_iterations: int = 500
    oracle_min_points: int = 10
    friction_deg: float = 30.0
    axis_align_deg: float = 30.0
    gripper_max_opening: float = 0.085
    gripper_finger_depth: float = 0.037
    gripper_finger_width: float = 0.022
    gripper_finger_thickness: float = 0.010
    gripper_finger_length: float = 0.050
    gripper_source: str = GRIPPER_SOURCE

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not isinstance(self.T, int) or self.T < 2:
            raise ConfigError(f"T must be an integer >= 2, got {self.T!r}")
        if not (math.isfinite(self.W_u) and self.W_u >= 0):
            raise ConfigError(f"W_u must be finite and >= 0, got {self.W_u!r}")
        if self.k_generate < 1 or self.k_execute < 1:
            raise ConfigError("k_generate and k_execute must be >= 1")
        if self.k_execute > self.k_generate:
            raise ConfigError(f"k_execute ({self.k_execute}) exceeds k_generate ({self.k_generate})")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        if self.backend not in ("mirror", "files"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.partial_max_points < 1 or self.partial_max_points >= self.output_size:
            raise ConfigError("partial_max_points must lie in [1, output_size)")
        try:
            self.gripper()
            self.sampler()
            self.rescore_config()
            self.completer(0)
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    # ------------------------------------------------------------ views

    def gripper(self) -> GripperModel:
        return GripperModel(self.gripper_max_opening, self.gripper_finger_depth,
                            self.gripper_finger_width, self.gripper_finger_thickness,
                            self.gripper_finger_length)

    def sampler(self) -> SamplerConfig:
        return SamplerConfig(score_mode=self.score_mode)

    def rescore_config(self) -> RescoreConfig:
        return RescoreConfig(W_u=self.W_u, penalty_mode=self.penalty_mode)

    def completer(self, seed: int, overrides: dict | None = None) -> MirrorCompleterConfig:
        kw = dict(seed=seed, dropout_rate=self.dropout_rate,
                  perturbation_scale=self.perturbation_scale, output_size=self.output_size,
                  far_side_bias=self.far_side_bias, min_gain=self.min_gain)
        for key, value in (overrides or {}).items():
            if key not in MirrorCompleterConfig.__dataclass_fields__ or key == "seed":
                raise ConfigError(f"unknown completion override {key!r}")
            kw[key] = value
        return MirrorCompleterConfig(**kw)

    # ------------------------------------------------------------ I/O

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = {}
        for key, value in d.items():
            kw[key] = _coerce(key, known[key].default, value)
        return cls(**kw)

    def replace(self, **changes) -> "PipelineConfig":
        d = self.to_dict()
        d.update(changes)
        return PipelineConfig.from_dict(d)

    def unit_scores(self) -> "PipelineConfig":
        """Switch to unit-interval sampler scores with the matching weight."""
        return self.replace(score_mode="unit", W_u=W_U_UNIT)


def _coerce(key, default, value):
    try:
        if isinstance(default, bool):
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} has invalid value {value!r}") from None


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CloudIOError(f"cannot read config: {exc}", path=path) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc.msg}", path=path, line=exc.lineno) from exc
    return PipelineConfig.from_dict(doc)


def save_config(cfg: PipelineConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
