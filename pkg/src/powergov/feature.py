"""Observation features and the High/Low/Stable load classification."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields

import numpy as np

OBS_DIM = 9


class LoadClass(enum.Enum):
    HIGH = "High"
    LOW = "Low"
    STABLE = "Stable"


@dataclass(frozen=True)
class FeatureConfig:
    p_max: float = 15.0
    slope_ref: float = 5.0
    cv_ref: float = 0.2
    cv_threshold: float = 0.05
    # None: 2x the largest per-step demand of the workload
    backlog_ref: float | None = None
    eps_p: float = 1e-6

    def __post_init__(self):
        from .errors import ConfigInvalid

        for name in ("p_max", "slope_ref", "cv_ref", "cv_threshold", "eps_p"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigInvalid(f"{name} must be finite and > 0, got {v!r}")
        if self.backlog_ref is not None and not (math.isfinite(self.backlog_ref) and self.backlog_ref > 0):
            raise ConfigInvalid(f"backlog_ref must be > 0, got {self.backlog_ref!r}")


@dataclass(frozen=True)
class RailStats:
    mean: float = 0.0
    variance: float = 0.0
    slope: float = 0.0


@dataclass(frozen=True)
class Observation:
    cpu_power_norm: float
    gpu_power_norm: float
    cpu_trend: float
    gpu_trend: float
    cpu_smooth: float
    gpu_smooth: float
    cpu_level_norm: float
    gpu_level_norm: float
    backlog_norm: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, x) -> Observation:
        return cls(*(float(v) for v in x))


def _clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def coefficient_of_variation(mean: float, variance: float, eps_p: float = 1e-6) -> float:
    return math.sqrt(max(variance, 0.0)) / max(mean, eps_p)


def classify_load(mean: float, variance: float, slope: float, config: FeatureConfig = FeatureConfig()) -> LoadClass:
    """Stable when the window is smooth, otherwise High or Low by trend direction."""
    if coefficient_of_variation(mean, variance, config.eps_p) < config.cv_threshold:
        return LoadClass.STABLE
    return LoadClass.HIGH if slope > 0 else LoadClass.LOW


def rail_features(stats: RailStats, config: FeatureConfig) -> tuple[float, float, float]:
    """(power_norm, trend, smooth) for one rail."""
    power = _clamp(stats.mean / config.p_max, 0.0, 1.0)
    trend = _clamp(stats.slope / config.slope_ref, -1.0, 1.0)
    cv = coefficient_of_variation(stats.mean, stats.variance, config.eps_p)
    smooth = _clamp(cv / config.cv_ref, 0.0, 1.0)
    return power, trend, smooth


def build_observation(
    cpu: RailStats,
    gpu: RailStats,
    cpu_level: int,
    gpu_level: int,
    cpu_levels: int,
    gpu_levels: int,
    backlog: float,
    backlog_ref: float,
    config: FeatureConfig = FeatureConfig(),
) -> Observation:
    cp, ct, cs = rail_features(cpu, config)
    gp, gt, gs = rail_features(gpu, config)
    return Observation(
        cpu_power_norm=cp,
        gpu_power_norm=gp,
        cpu_trend=ct,
        gpu_trend=gt,
        cpu_smooth=cs,
        gpu_smooth=gs,
        cpu_level_norm=cpu_level / (cpu_levels - 1) if cpu_levels > 1 else 0.0,
        gpu_level_norm=gpu_level / (gpu_levels - 1) if gpu_levels > 1 else 0.0,
        backlog_norm=_clamp(backlog / backlog_ref, 0.0, 1.0),
    )
