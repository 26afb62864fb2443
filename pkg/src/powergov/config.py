"""Flat run configuration.

Training keys use the PPO hyper-parameter names (``Sample_Step``,
``Target_kl``, ...); everything else is snake_case. Every key has a default,
unknown keys are rejected, and ``POWERGOV_<KEY>`` environment variables
override file values (parsed as YAML scalars/lists).
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import yaml

from .envsim import DeviceModel, EnvConfig
from .errors import ConfigError, NoSuchFile
from .feature import FeatureConfig
from .ppo import TrainConfig
from .telemetry import PowerTrace, load_trace
from . import workloads

ENV_PREFIX = "POWERGOV_"

# config key -> TrainConfig field
TRAIN_KEYS = {
    "Sample_Step": "sample_step",
    "Reuse_Times": "epochs",
    "Gamma": "gamma",
    "Lambda_Entropy": "lam",
    "Clip_Epsilon": "clip_eps",
    "Policy_Learning_Rate": "policy_lr",
    "Value_Function_Learning_Rate": "value_lr",
    "Train_Policy_Iterations": "train_policy_iters",
    "Train_Value_Iterations": "train_value_iters",
    "Target_kl": "target_kl",
    "Hidden_Sizes": "hidden",
    "use_gae": "use_gae",
    "log_std_init": "log_std_init",
    "dtype": "dtype",
}

FEATURE_KEYS = ("p_max", "slope_ref", "cv_ref", "cv_threshold", "backlog_ref")

ENV_KEYS = (
    "dt", "alpha", "beta", "tau", "horizon", "initial_cpu_level", "initial_gpu_level", "watts_per_work_unit",
    "cpu_power_w", "cpu_capacity", "cpu_idle_w", "gpu_power_w", "gpu_capacity", "gpu_idle_w",
)

WORKLOAD_KEYS = (
    "workload_trace", "workload_kind", "workload_duration_s", "workload_low_w", "workload_high_w",
    "workload_period_s", "workload_duty", "workload_ramp_s", "workload_cpu_share",
)

OTHER_KEYS = ("windows", "baseline", "seed")

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    # PPO
    "Sample_Step": 3000,
    "Reuse_Times": 200,
    "Gamma": 0.99,
    "Lambda_Entropy": 0.97,
    "Clip_Epsilon": 0.2,
    "Policy_Learning_Rate": 3e-4,
    "Value_Function_Learning_Rate": 1e-3,
    "Train_Policy_Iterations": 80,
    "Train_Value_Iterations": 80,
    "Target_kl": 0.01,
    "Hidden_Sizes": [64, 64],
    "use_gae": False,
    "log_std_init": -0.5,
    "dtype": "float32",
    # features
    "p_max": 15.0,
    "slope_ref": 5.0,
    "cv_ref": 0.2,
    "cv_threshold": 0.05,
    "backlog_ref": None,
    # environment
    "dt": 0.1,
    "alpha": 1.0,
    "beta": 4.0,
    "tau": 0.5,
    "horizon": None,
    "initial_cpu_level": 0,
    "initial_gpu_level": 0,
    "watts_per_work_unit": 1.0,
    "cpu_power_w": [1.0, 2.5, 4.5],
    "cpu_capacity": [1.0, 2.2, 3.5],
    "cpu_idle_w": 0.5,
    "gpu_power_w": [0.5, 3.0, 7.5],
    "gpu_capacity": [1.0, 4.0, 9.0],
    "gpu_idle_w": 0.5,
    # workload
    "workload_trace": None,
    "workload_kind": "duty",
    "workload_duration_s": 90.0,
    "workload_low_w": 1.5,
    "workload_high_w": 8.0,
    "workload_period_s": 4.0,
    "workload_duty": 0.5,
    "workload_ramp_s": 0.5,
    "workload_cpu_share": 0.3,
    # report
    "windows": [1.0, 10.0, 30.0, 60.0, 90.0],
    "baseline": "always_max",
}

KEY_ORDER = tuple(DEFAULTS)

_INT_KEYS = {"seed", "Sample_Step", "Reuse_Times", "Train_Policy_Iterations", "Train_Value_Iterations",
             "initial_cpu_level", "initial_gpu_level"}
_OPT_INT_KEYS = {"horizon"}
_BOOL_KEYS = {"use_gae"}
_STR_KEYS = {"dtype", "workload_kind", "baseline"}
_OPT_STR_KEYS = {"workload_trace"}
_LIST_KEYS = {"Hidden_Sizes", "cpu_power_w", "cpu_capacity", "gpu_power_w", "gpu_capacity", "windows"}
_OPT_FLOAT_KEYS = {"backlog_ref"}


def _coerce(key: str, value: Any) -> Any:
    if key in _OPT_INT_KEYS | _OPT_FLOAT_KEYS | _OPT_STR_KEYS and value is None:
        return None
    if key in _BOOL_KEYS:
        if not isinstance(value, bool):
            raise ValueError("expected true/false")
        return value
    if key in _INT_KEYS | _OPT_INT_KEYS:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ValueError("expected an integer")
        return int(value)
    if key in _STR_KEYS | _OPT_STR_KEYS:
        if not isinstance(value, str):
            raise ValueError("expected a string")
        return value
    if key in _LIST_KEYS:
        if isinstance(value, str):
            value = yaml.safe_load(value.replace("(", "[").replace(")", "]"))
        if not isinstance(value, (list, tuple)) or not value:
            raise ValueError("expected a non-empty list")
        conv = int if key == "Hidden_Sizes" else float
        out = []
        for v in value:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValueError("list entries must be numbers")
            out.append(conv(v))
        return out
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError("expected a number")
    return float(value)


@dataclass(frozen=True)
class RunConfig:
    values: Mapping[str, Any]
    base_dir: Path = Path(".")

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def train_config(self) -> TrainConfig:
        kwargs = {field: self.values[key] for key, field in TRAIN_KEYS.items()}
        kwargs["seed"] = self.seed
        kwargs["hidden"] = tuple(kwargs["hidden"])
        return TrainConfig(**kwargs)

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(**{k: self.values[k] for k in FEATURE_KEYS})

    def env_config(self) -> EnvConfig:
        v = self.values
        return EnvConfig(
            cpu=DeviceModel(tuple(v["cpu_power_w"]), tuple(v["cpu_capacity"]), v["cpu_idle_w"]),
            gpu=DeviceModel(tuple(v["gpu_power_w"]), tuple(v["gpu_capacity"]), v["gpu_idle_w"]),
            dt=v["dt"],
            alpha=v["alpha"],
            beta=v["beta"],
            tau=v["tau"],
            horizon=v["horizon"],
            initial_levels=(v["initial_cpu_level"], v["initial_gpu_level"]),
            watts_per_work_unit=v["watts_per_work_unit"],
            feature=self.feature_config(),
        )

    def workload_path(self) -> Path | None:
        p = self.values["workload_trace"]
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def workload(self) -> PowerTrace:
        path = self.workload_path()
        if path is not None:
            return load_trace(path)
        v = self.values
        try:
            return workloads.from_spec(v["workload_kind"], v["workload_duration_s"], v["workload_low_w"],
                                       v["workload_high_w"], v["workload_period_s"], v["workload_duty"],
                                       v["workload_ramp_s"], v["workload_cpu_share"])
        except ValueError as exc:
            raise ConfigError(f"workload_kind: {exc}") from None

    def env_block(self) -> dict:
        keys = FEATURE_KEYS + ENV_KEYS + WORKLOAD_KEYS
        block = {k: self.values[k] for k in keys}
        path = self.workload_path()
        if path is not None:
            # hash the trace content, not its location
            try:
                block["workload_trace"] = hashlib.sha256(path.read_bytes()).hexdigest()
            except FileNotFoundError:
                raise NoSuchFile(str(path)) from None
        return block

    def env_hash(self) -> str:
        blob = json.dumps(self.env_block(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def with_values(self, **updates) -> RunConfig:
        vals = dict(self.values)
        vals.update(updates)
        return build_config(vals, self.base_dir)

    def to_yaml(self) -> str:
        lines = []
        for k in KEY_ORDER:
            lines.append(yaml.safe_dump({k: self.values[k]}, default_flow_style=True, sort_keys=False).strip()
                         .removeprefix("{").removesuffix("}"))
        return "\n".join(lines) + "\n"


def build_config(values: Mapping[str, Any], base_dir: Path | str = ".") -> RunConfig:
    """Merge ``values`` over defaults, coerce types and validate every block."""
    errors = []
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        errors.append(f"unknown key(s): {', '.join(unknown)}")
    merged = dict(DEFAULTS)
    for key, val in values.items():
        if key not in DEFAULTS:
            continue
        try:
            merged[key] = _coerce(key, val)
        except ValueError as exc:
            errors.append(f"{key}: {exc}")
    cfg = RunConfig(merged, Path(base_dir))
    inverse = {f: k for k, f in TRAIN_KEYS.items()}

    def check(build, prefix=""):
        try:
            build()
        except ConfigError as exc:
            msg = str(exc)
            field = msg.split(" ", 1)[0]
            key = inverse.get(field, prefix + field)
            errors.append(f"{key}: {msg}")

    check(cfg.train_config)
    check(cfg.feature_config)
    for dev in ("cpu", "gpu"):
        check(lambda: DeviceModel(tuple(merged[f"{dev}_power_w"]), tuple(merged[f"{dev}_capacity"]),
                                  merged[f"{dev}_idle_w"]), prefix=f"{dev}_")
    if merged["baseline"] not in ("always_max", "always_keep", "always_min"):
        errors.append(f"baseline: unknown baseline {merged['baseline']!r}")
    if merged["workload_trace"] is None and merged["workload_kind"] not in ("idle", "constant", "ramp", "square", "duty"):
        errors.append(f"workload_kind: unknown kind {merged['workload_kind']!r}")
    if any(w <= 0 for w in merged["windows"]):
        errors.append("windows: all windows must be > 0")
    if not errors:
        check(cfg.env_config)
    if errors:
        raise ConfigError("; ".join(errors))
    return cfg


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    out = {}
    for key in DEFAULTS:
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = yaml.safe_load(environ[name])
    return out


def load_config(path: str | os.PathLike | None = None, overrides: Mapping[str, Any] | None = None,
                environ: Mapping[str, str] | None = None) -> RunConfig:
    values: dict[str, Any] = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise NoSuchFile(str(path)) from None
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: expected a flat key: value mapping")
        nested = [k for k, v in loaded.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"nested sections are not supported: {', '.join(map(str, nested))}")
        values.update(loaded)
        base = path.parent
    values.update(env_overrides(environ))
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    return build_config(values, base)
