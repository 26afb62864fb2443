"""Trace-driven CPU/GPU power-state environment.

Each device sits at one of ``L`` discrete power levels. Every decision
interval the agent nudges each device Up, Keep or Down by one level; the
workload trace supplies demand (work units), the devices serve it at their
level's capacity, and unserved work accumulates as backlog.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import telemetry
from .errors import ConfigInvalid, ConfigTooLarge, SteppedAfterDone, WindowTooSmall
from .feature import (
    OBS_DIM,
    FeatureConfig,
    LoadClass,
    Observation,
    RailStats,
    build_observation,
    classify_load,
    rail_features,
)
from .telemetry import PowerTrace

# backlog below this is treated as fully served
BACKLOG_EPS = 1e-12
# pair spacing used to encode level changes in an emitted power trace
EDGE_EPS = 1e-9


class Move(enum.IntEnum):
    UP = 1
    KEEP = 0
    DOWN = -1


# Table order: CPU-major, Up/Keep/Down
_ORDER = (Move.UP, Move.KEEP, Move.DOWN)
ACTION_TABLE: tuple[tuple[Move, Move], ...] = tuple((c, g) for c in _ORDER for g in _ORDER)
_INDEX = {pair: i for i, pair in enumerate(ACTION_TABLE)}


@dataclass(frozen=True)
class JointAction:
    index: int
    cpu_move: Move
    gpu_move: Move
    raw: tuple[float, float] = (0.0, 0.0)
    log_prob: float = 0.0

    @classmethod
    def from_index(cls, index: int) -> JointAction:
        cpu, gpu = ACTION_TABLE[index]
        return cls(index, cpu, gpu, (float(cpu), float(gpu)))

    @classmethod
    def from_moves(cls, cpu: Move, gpu: Move) -> JointAction:
        return cls.from_index(_INDEX[(Move(cpu), Move(gpu))])


def _threshold(x: float, tau: float) -> Move:
    if x > tau:
        return Move.UP
    if x < -tau:
        return Move.DOWN
    return Move.KEEP


def decode_action(raw, tau: float = 0.5, log_prob: float = 0.0) -> JointAction:
    """Threshold a continuous 2-vector into one of the nine joint moves."""
    x0, x1 = float(raw[0]), float(raw[1])
    if not (math.isfinite(x0) and math.isfinite(x1)):
        raise ValueError("raw action must be finite")
    cpu, gpu = _threshold(x0, tau), _threshold(x1, tau)
    return JointAction(_INDEX[(cpu, gpu)], cpu, gpu, (x0, x1), float(log_prob))


@dataclass(frozen=True)
class DeviceModel:
    power_w: tuple[float, ...]
    capacity: tuple[float, ...]
    idle_w: float = 0.5

    def __post_init__(self):
        p = tuple(float(x) for x in self.power_w)
        c = tuple(float(x) for x in self.capacity)
        object.__setattr__(self, "power_w", p)
        object.__setattr__(self, "capacity", c)
        if len(p) < 1 or len(p) != len(c):
            raise ConfigInvalid("power_w and capacity must be non-empty and the same length")
        if not all(math.isfinite(x) for x in p + c + (self.idle_w,)):
            raise ConfigInvalid("device tables must be finite")
        if p[0] < 0 or self.idle_w < 0 or any(x < 0 for x in c):
            raise ConfigInvalid("powers and capacities must be >= 0")
        if any(b <= a for a, b in zip(p, p[1:])):
            raise ConfigInvalid(f"power_w must be strictly increasing, got {list(p)}")
        if any(b < a for a, b in zip(c, c[1:])):
            raise ConfigInvalid(f"capacity must be non-decreasing, got {list(c)}")

    @property
    def levels(self) -> int:
        return len(self.power_w)

    def draw(self, level: int) -> float:
        return self.power_w[level] + self.idle_w


DEFAULT_CPU = DeviceModel((1.0, 2.5, 4.5), (1.0, 2.2, 3.5), 0.5)
DEFAULT_GPU = DeviceModel((0.5, 3.0, 7.5), (1.0, 4.0, 9.0), 0.5)


@dataclass(frozen=True)
class EnvConfig:
    cpu: DeviceModel = DEFAULT_CPU
    gpu: DeviceModel = DEFAULT_GPU
    dt: float = 0.1
    alpha: float = 1.0
    beta: float = 4.0
    tau: float = 0.5
    horizon: int | None = None
    initial_levels: tuple[int, int] = (0, 0)
    watts_per_work_unit: float = 1.0
    feature: FeatureConfig = field(default_factory=FeatureConfig)

    def __post_init__(self):
        for name in ("dt", "tau", "watts_per_work_unit"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigInvalid(f"{name} must be finite and > 0, got {v!r}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigInvalid(f"{name} must be finite and >= 0, got {v!r}")
        if self.horizon is not None and self.horizon < 1:
            raise ConfigInvalid("horizon must be >= 1")
        c0, g0 = self.initial_levels
        if not (0 <= c0 < self.cpu.levels and 0 <= g0 < self.gpu.levels):
            raise ConfigInvalid(f"initial_levels {self.initial_levels} outside device level range")


def reward(power_w: float, backlog: float, p_max: float, backlog_ref: float, alpha: float = 1.0, beta: float = 4.0) -> float:
    return -alpha * (power_w / p_max) - beta * (backlog / backlog_ref)


@dataclass(frozen=True)
class StepOutcome:
    observation: Observation
    reward: float
    done: bool
    info: dict


@dataclass(frozen=True)
class SimState:
    cpu_level: int
    gpu_level: int
    backlog: float
    cursor: int


class PowerEnv:
    """Gym-style environment over a fixed workload trace.

    Observations describe the workload window that just elapsed (the
    initial observation has zero power features), the current device
    levels and the backlog.
    """

    def __init__(self, config: EnvConfig, workload: PowerTrace):
        self.config = config
        self.workload = workload
        dt = config.dt
        n = int(math.floor(workload.duration / dt + 1e-9))
        if n < 1:
            raise ConfigInvalid(f"workload ({workload.duration} s) shorter than one interval ({dt} s)")
        self.n_intervals = n
        edges = workload.start + np.arange(n + 1) * dt
        edges[-1] = min(edges[-1], workload.end)
        joules = telemetry.cumulative_joules(workload, edges, "total")
        self.demand = np.maximum(np.diff(joules), 0.0) / config.watts_per_work_unit
        self.demand.setflags(write=False)
        peak = float(self.demand.max())
        fc = config.feature
        self.backlog_ref = fc.backlog_ref if fc.backlog_ref is not None else (2.0 * peak if peak > 0 else 1.0)

        feats = np.zeros((n, 6))
        classes = []
        for k in range(n):
            cs = _interval_stats(workload, edges[k], edges[k + 1], "cpu")
            gs = _interval_stats(workload, edges[k], edges[k + 1], "gpu")
            cp, ct, csm = rail_features(cs, fc)
            gp, gt, gsm = rail_features(gs, fc)
            feats[k] = (cp, gp, ct, gt, csm, gsm)
            classes.append((classify_load(cs.mean, cs.variance, cs.slope, fc),
                            classify_load(gs.mean, gs.variance, gs.slope, fc)))
        self._feats = feats
        self.load_classes: list[tuple[LoadClass, LoadClass]] = classes
        self._cpu_levels = np.arange(config.cpu.levels)
        self._state: SimState | None = None
        self._done = True

    @property
    def obs_dim(self) -> int:
        return OBS_DIM

    @property
    def episode_length(self) -> int:
        h = self.config.horizon
        return self.n_intervals if h is None else min(h, self.n_intervals)

    @property
    def state(self) -> SimState:
        return self._state

    @property
    def done(self) -> bool:
        return self._done

    def reset(self, seed: int | None = None) -> Observation:
        # dynamics are deterministic; the seed is accepted for API symmetry
        self.seed = seed
        c, g = self.config.initial_levels
        self._state = SimState(c, g, 0.0, 0)
        self._done = False
        self._steps = 0
        self.cum_demand = 0.0
        self.cum_served = 0.0
        self.power_log: list[tuple[float, float]] = []
        self.violations = 0
        return self.observe()

    def observe(self) -> Observation:
        return Observation.from_array(self.observation_vector())

    def observation_vector(self, out: np.ndarray | None = None) -> np.ndarray:
        s = self._state
        cfg = self.config
        x = np.empty(OBS_DIM) if out is None else out
        x[:6] = self._feats[s.cursor - 1] if s.cursor > 0 else 0.0
        x[6] = s.cpu_level / (cfg.cpu.levels - 1) if cfg.cpu.levels > 1 else 0.0
        x[7] = s.gpu_level / (cfg.gpu.levels - 1) if cfg.gpu.levels > 1 else 0.0
        x[8] = min(max(s.backlog / self.backlog_ref, 0.0), 1.0)
        return x

    def _core(self, state: SimState, cpu_move: int, gpu_move: int):
        cfg = self.config
        c = min(max(state.cpu_level + int(cpu_move), 0), cfg.cpu.levels - 1)
        g = min(max(state.gpu_level + int(gpu_move), 0), cfg.gpu.levels - 1)
        d = float(self.demand[state.cursor])
        cap = (cfg.cpu.capacity[c] + cfg.gpu.capacity[g]) * cfg.dt
        pending = state.backlog + d
        served = min(cap, pending)
        backlog = pending - served
        if backlog < BACKLOG_EPS:
            backlog, served = 0.0, pending
        cpu_w = cfg.cpu.draw(c)
        gpu_w = cfg.gpu.draw(g)
        r = reward(cpu_w + gpu_w, backlog, cfg.feature.p_max, self.backlog_ref, cfg.alpha, cfg.beta)
        return SimState(c, g, backlog, state.cursor + 1), r, d, served, cpu_w, gpu_w

    def transition(self, state: SimState, cpu_move: Move, gpu_move: Move) -> tuple[SimState, float, dict]:
        """Pure single-interval update; does not touch the env's own state."""
        new, r, d, served, cpu_w, gpu_w = self._core(state, cpu_move, gpu_move)
        power = cpu_w + gpu_w
        info = {
            "power_w": power,
            "cpu_w": cpu_w,
            "gpu_w": gpu_w,
            "energy_mwh_step": power * self.config.dt / telemetry.JOULES_PER_MWH,
            "demand": d,
            "served": served,
            "backlog": new.backlog,
            "violated": new.backlog > 0.0,
            "levels": (new.cpu_level, new.gpu_level),
        }
        return new, r, info

    def advance(self, cpu_move: int, gpu_move: int) -> tuple[float, bool]:
        """Same as ``step`` without building the observation or info dict; returns (reward, done)."""
        if self._done or self._state is None:
            raise SteppedAfterDone("advance() called on a finished episode; call reset()")
        new, r, d, served, cpu_w, gpu_w = self._core(self._state, cpu_move, gpu_move)
        self._state = new
        self._steps += 1
        self.cum_demand += d
        self.cum_served += served
        self.violations += new.backlog > 0.0
        self.power_log.append((cpu_w, gpu_w))
        self._done = new.cursor >= self.n_intervals or self._steps >= self.episode_length
        return r, self._done

    def step(self, action: JointAction) -> StepOutcome:
        if self._done or self._state is None:
            raise SteppedAfterDone("step() called on a finished episode; call reset()")
        new, r, info = self.transition(self._state, action.cpu_move, action.gpu_move)
        self._state = new
        self._steps += 1
        self.cum_demand += info["demand"]
        self.cum_served += info["served"]
        self.violations += int(info["violated"])
        self.power_log.append((info["cpu_w"], info["gpu_w"]))
        info["load_class"] = self.load_classes[new.cursor - 1]
        self._done = new.cursor >= self.n_intervals or self._steps >= self.episode_length
        return StepOutcome(self.observe(), r, self._done, info)

    def power_trace(self) -> PowerTrace:
        """Simulated rail power so far, as a trace whose trapezoid matches per-step energy."""
        if not self.power_log:
            raise ValueError("no steps taken")
        return step_power_trace(np.array(self.power_log), self.config.dt, self.workload.start)


def step_power_trace(power: np.ndarray, dt: float, start: float = 0.0) -> PowerTrace:
    """Encode per-interval constant rail powers (n x 2) as a trace.

    Each level change becomes a ramp of width ``2 * EDGE_EPS`` centred on the
    interval boundary. A centred ramp carries exactly the energy of the ideal
    step, so the trace integrates to the per-step energy sum.
    """
    power = np.asarray(power, dtype=np.float64)
    n = power.shape[0]
    bounds = start + np.arange(1, n) * dt
    t = np.empty(2 * n)
    t[0] = start
    t[-1] = start + n * dt
    t[1:-1:2] = bounds - EDGE_EPS
    t[2:-1:2] = bounds + EDGE_EPS
    rep = np.repeat(power, 2, axis=0)
    return PowerTrace.from_power(t, rep[:, 0], rep[:, 1], nominal_rate=1.0 / dt)


def _interval_stats(trace: PowerTrace, t0: float, t1: float, channel) -> RailStats:
    try:
        return RailStats(*telemetry.window_stats(trace, t0, t1, channel))
    except WindowTooSmall:
        p = trace.power(channel)
        a, b = np.interp([t0, t1], trace.t, p)
        return RailStats((a + b) / 2, ((b - a) / 2) ** 2, (b - a) / (t1 - t0))


# ---------------------------------------------------------------- policies

Policy = Callable[[np.ndarray], JointAction]


def baseline_policy(kind: str) -> Policy:
    """Controller-free reference: ``always_max`` or ``always_keep``."""
    if kind == "always_max":
        action = JointAction.from_moves(Move.UP, Move.UP)
    elif kind == "always_keep":
        action = JointAction.from_moves(Move.KEEP, Move.KEEP)
    elif kind == "always_min":
        action = JointAction.from_moves(Move.DOWN, Move.DOWN)
    else:
        raise ValueError(f"unknown baseline {kind!r}")

    def policy(obs: np.ndarray) -> JointAction:
        return action

    policy.kind = kind
    return policy


@dataclass
class EpisodeRecord:
    rewards: list[float]
    infos: list[dict]
    power: PowerTrace

    @property
    def steps(self) -> int:
        return len(self.rewards)

    @property
    def violation_rate(self) -> float:
        return sum(i["violated"] for i in self.infos) / len(self.infos)

    @property
    def energy_mwh(self) -> float:
        return sum(i["energy_mwh_step"] for i in self.infos)


def run_episode(env: PowerEnv, policy: Policy, seed: int | None = None) -> EpisodeRecord:
    env.reset(seed)
    x = env.observation_vector()
    rewards, infos = [], []
    while not env.done:
        out = env.step(policy(x))
        x = env.observation_vector()
        rewards.append(out.reward)
        infos.append(out.info)
    return EpisodeRecord(rewards, infos, env.power_trace())


# ----------------------------------------------------------------- oracle

ORACLE_MAX_LEVELS = 3
ORACLE_MAX_HORIZON = 50
ORACLE_MAX_STATES = 81


@dataclass
class OracleResult:
    mapping: dict[tuple[int, int], JointAction]
    mean_reward: float
    total_reward: float
    behaviours: int

    def policy(self, env: PowerEnv) -> Policy:
        """Replay the level-to-action mapping (unvisited levels keep)."""
        keep = JointAction.from_moves(Move.KEEP, Move.KEEP)

        def policy(obs: np.ndarray) -> JointAction:
            s = env.state
            return self.mapping.get((s.cpu_level, s.gpu_level), keep)

        return policy


def _representatives(env: PowerEnv, c: int, g: int) -> list[tuple[tuple[int, int], JointAction]]:
    """One action per distinct successor level pair, preferring the fewest non-Keep moves."""
    cfg = env.config
    by_outcome: dict[tuple[int, int], JointAction] = {}
    ranked = sorted(range(9), key=lambda i: (sum(m != Move.KEEP for m in ACTION_TABLE[i]), i))
    for i in ranked:
        cm, gm = ACTION_TABLE[i]
        nxt = (min(max(c + cm, 0), cfg.cpu.levels - 1), min(max(g + gm, 0), cfg.gpu.levels - 1))
        by_outcome.setdefault(nxt, JointAction.from_index(i))
    return list(by_outcome.items())


def exhaustive_oracle(env: PowerEnv) -> OracleResult:
    """Best stationary deterministic (cpu_level, gpu_level) -> action mapping.

    Mappings are enumerated by depth-first search over the trajectory they
    induce: an action is only chosen the first time a level pair is visited,
    and actions that lead to the same successor are merged. Every mapping
    is therefore covered by exactly one explored behaviour.
    """
    cfg = env.config
    n_states = cfg.cpu.levels * cfg.gpu.levels
    horizon = env.episode_length
    if max(cfg.cpu.levels, cfg.gpu.levels) > ORACLE_MAX_LEVELS or horizon > ORACLE_MAX_HORIZON or n_states > ORACLE_MAX_STATES:
        raise ConfigTooLarge(
            f"oracle needs L <= {ORACLE_MAX_LEVELS} and <= {ORACLE_MAX_HORIZON} steps; "
            f"got L = ({cfg.cpu.levels}, {cfg.gpu.levels}), {horizon} steps"
        )
    c0, g0 = cfg.initial_levels
    best = {"total": -math.inf, "mapping": None}
    count = 0
    mapping: dict[tuple[int, int], JointAction] = {}

    def search(state: SimState, steps: int, total: float) -> None:
        nonlocal count
        while steps < horizon:
            key = (state.cpu_level, state.gpu_level)
            act = mapping.get(key)
            if act is None:
                for _, rep in _representatives(env, *key):
                    mapping[key] = rep
                    search(state, steps, total)
                del mapping[key]
                return
            state, r, _ = env.transition(state, act.cpu_move, act.gpu_move)
            total += r
            steps += 1
        count += 1
        if total > best["total"] + 1e-12:
            best["total"] = total
            best["mapping"] = dict(mapping)

    search(SimState(c0, g0, 0.0, 0), 0, 0.0)
    return OracleResult(best["mapping"], best["total"] / horizon, best["total"], count)


# ---------------------------------------------------------------- presets

def toy_config() -> EnvConfig:
    """Bundled 3-level deterministic environment used for optimality checks."""
    return EnvConfig(horizon=50)


def toy_workload():
    from .workloads import constant

    return constant(TOY_DEMAND_W, 5.0)


def duty_config() -> EnvConfig:
    """Bundled duty-cycled environment used for the energy-saving check.

    At 2 W per work unit the 8 W plateau (4 units/s) fits the (0, 1) level
    pair and the 1.5 W floor fits (0, 0), each with some headroom.
    """
    return EnvConfig(watts_per_work_unit=2.0)


def duty_workload():
    from .workloads import duty_cycle

    # The first 0.1 s ramp interval stays inside the (0, 0) capacity, so a
    # controller reacting one interval late can still step up in time.
    return duty_cycle(low_w=1.5, high_w=8.0, period_s=4.0, duty=0.5, duration_s=90.0, ramp_s=0.2)


TOY_DEMAND_W = 8.0
