"""Tracker configuration: every tunable in one place, loadable from YAML.

The file uses the same YAML syntax as scene files. Top-level sections are
``sampler``, ``ransac``, ``refine``, ``graph``, ``tsdf`` and ``pipeline``;
unknown sections or keys are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .factor_graph import LMConfig, NoiseModel
from .keypoints import SamplerConfig
from .registration import RansacConfig
from .sdf_refine import RefineConfig


class ConfigError(ValueError):
    pass


@dataclass
class GraphConfig:
    prior_sigma: float = 1e-3  # sqrt of the 1e-6 prior variance
    odom_rot_sigma_deg: float = 1.0
    odom_trans_sigma: float = 0.005
    obs_bearing_sigma_deg: float = 0.5
    obs_range_sigma: float = 0.005
    huber_delta: float = 1.345
    lm_initial_lambda: float = 1e-4
    max_iterations: int = 50

    def noise_model(self) -> NoiseModel:
        r = np.deg2rad(self.odom_rot_sigma_deg)
        b = np.deg2rad(self.obs_bearing_sigma_deg)
        return NoiseModel(
            prior=np.eye(6) * self.prior_sigma**2,
            odom=np.diag([r**2] * 3 + [self.odom_trans_sigma**2] * 3),
            obs=np.diag([b**2, b**2, self.obs_range_sigma**2]),
            huber_delta=self.huber_delta,
        )

    def lm_config(self) -> LMConfig:
        return LMConfig(initial_lambda=self.lm_initial_lambda, max_iterations=self.max_iterations)

    def validate(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"graph.{f.name} must be positive")


@dataclass
class TsdfConfig:
    voxel_size: float = 0.004
    trunc: float = 0.012
    refuse_rot_deg: float = 0.5
    refuse_trans: float = 0.002

    def validate(self):
        if self.voxel_size <= 0 or self.trunc <= 0:
            raise ConfigError("tsdf.voxel_size and tsdf.trunc must be positive")
        if self.refuse_rot_deg < 0 or self.refuse_trans < 0:
            raise ConfigError("re-fusion thresholds must be non-negative")


@dataclass
class PipelineConfig:
    visibility_gate: float = 0.5
    multi_hypothesis: bool = True
    sdf_refine: bool = True
    graph_optimization: bool = True
    dense_points: int = 2000
    min_init_pixels: int = 50
    seed: int = 0

    def validate(self):
        if not 0.0 < self.visibility_gate <= 1.0:
            raise ConfigError("pipeline.visibility_gate must be in (0, 1]")
        if self.dense_points < 1 or self.min_init_pixels < 1:
            raise ConfigError("pipeline.dense_points and min_init_pixels must be >= 1")


@dataclass
class TrackerConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    tsdf: TsdfConfig = field(default_factory=TsdfConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def validate(self) -> "TrackerConfig":
        try:
            self.sampler.validate()
            self.ransac.validate()
            self.refine.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        self.graph.validate()
        self.tsdf.validate()
        self.pipeline.validate()
        return self


# sampler angles are given in degrees in files
_SAMPLER_DEG = {"rotation_trigger_deg": "rotation_trigger"}


def _fill(obj, section: str, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    names = {f.name: f for f in fields(obj)}
    for key, val in d.items():
        target = key
        if section == "sampler" and key in _SAMPLER_DEG:
            target, val = _SAMPLER_DEG[key], np.deg2rad(float(val))
        elif section == "sampler" and key == "rotation_trigger":
            raise ConfigError("use sampler.rotation_trigger_deg (degrees)")
        if target not in names:
            raise ConfigError(f"unknown key '{section}.{key}'")
        current = getattr(obj, target)
        try:
            if isinstance(current, bool):
                if not isinstance(val, bool):
                    raise TypeError("expected true/false")
            elif isinstance(current, int):
                if isinstance(val, bool) or float(val) != int(val):
                    raise TypeError("expected an integer")
                val = int(val)
            elif isinstance(current, float):
                val = float(val)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{section}.{key}: {e}") from e
        setattr(obj, target, val)


def config_from_dict(d: Optional[dict]) -> TrackerConfig:
    cfg = TrackerConfig()
    for section, val in (d or {}).items():
        if section not in {f.name for f in fields(cfg)}:
            raise ConfigError(f"unknown config section '{section}'")
        _fill(getattr(cfg, section), section, val or {})
    return cfg.validate()


def load_config(path) -> TrackerConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return config_from_dict(data)


def apply_overrides(cfg: TrackerConfig, overrides) -> TrackerConfig:
    """Apply ``section.key=value`` strings (values parsed as YAML scalars)."""
    d: dict = {}
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override '{item}' must look like section.key=value")
        lhs, rhs = item.split("=", 1)
        section, key = lhs.split(".", 1)
        d.setdefault(section, {})[key] = yaml.safe_load(rhs)
    for section, val in d.items():
        if section not in {f.name for f in fields(cfg)}:
            raise ConfigError(f"unknown config section '{section}'")
        _fill(getattr(cfg, section), section, val)
    return cfg.validate()
