"""Energy-aware CPU/GPU power-state controller trained with PPO on power telemetry."""

from .envsim import EnvConfig, PowerEnv, exhaustive_oracle
from .ppo import TrainConfig, train
from .report import EnergyReport, energy_table
from .telemetry import PowerTrace, integrate_energy, load_trace

__all__ = [
    "EnergyReport",
    "EnvConfig",
    "PowerEnv",
    "PowerTrace",
    "TrainConfig",
    "energy_table",
    "exhaustive_oracle",
    "integrate_energy",
    "load_trace",
    "train",
]

__version__ = "0.1.0"
