"""Synthetic workload traces.

Workload power stands in for application demand: the environment converts
joules of workload power into work units via ``watts_per_work_unit``.
"""

from __future__ import annotations

import numpy as np

from .telemetry import DEFAULT_RATE, PowerTrace


def _grid(duration_s: float, rate: float) -> np.ndarray:
    if not duration_s > 0:
        raise ValueError("duration_s must be > 0")
    n = int(round(duration_s * rate))
    return np.arange(n + 1) / rate


def _split(t, total, cpu_share: float, rate: float) -> PowerTrace:
    if not 0.0 <= cpu_share <= 1.0:
        raise ValueError("cpu_share must be in [0, 1]")
    total = np.maximum(np.asarray(total, dtype=np.float64), 0.0)
    return PowerTrace.from_power(t, total * cpu_share, total * (1.0 - cpu_share), nominal_rate=rate)


def constant(power_w: float, duration_s: float, cpu_share: float = 0.3, rate: float = DEFAULT_RATE) -> PowerTrace:
    t = _grid(duration_s, rate)
    return _split(t, np.full(t.shape, float(power_w)), cpu_share, rate)


def idle(duration_s: float, rate: float = DEFAULT_RATE) -> PowerTrace:
    return constant(0.0, duration_s, rate=rate)


def ramp(start_w: float, end_w: float, duration_s: float, cpu_share: float = 0.3, rate: float = DEFAULT_RATE) -> PowerTrace:
    t = _grid(duration_s, rate)
    return _split(t, start_w + (end_w - start_w) * t / t[-1], cpu_share, rate)


def duty_cycle(
    low_w: float,
    high_w: float,
    period_s: float,
    duty: float,
    duration_s: float,
    ramp_s: float = 0.0,
    cpu_share: float = 0.3,
    rate: float = DEFAULT_RATE,
) -> PowerTrace:
    """Trapezoidal duty cycle: low phase, ramp up, high phase, ramp down.

    ``duty`` is the fraction of the period spent at or ramping toward the
    high level; ``ramp_s = 0`` gives a square wave.
    """
    if not 0.0 < duty < 1.0:
        raise ValueError("duty must be in (0, 1)")
    high_len = duty * period_s
    if 2 * ramp_s > min(high_len, period_s - high_len) + 1e-12:
        raise ValueError("ramps do not fit in the period")
    t = _grid(duration_s, rate)
    low_len = period_s - high_len
    # phase origin: start of low phase
    ph = np.mod(t, period_s)
    up = np.clip((ph - low_len) / ramp_s, 0.0, 1.0) if ramp_s > 0 else (ph >= low_len).astype(float)
    total = low_w + (high_w - low_w) * up
    if ramp_s > 0:
        # ramp down occupies the tail of the high phase
        down = np.clip((period_s - ph) / ramp_s, 0.0, 1.0)
        total = np.where(ph >= low_len, low_w + (high_w - low_w) * np.minimum(up, down), total)
    return _split(t, total, cpu_share, rate)


square = duty_cycle


def from_spec(kind: str, duration_s: float, low_w: float, high_w: float, period_s: float, duty: float,
              ramp_s: float, cpu_share: float) -> PowerTrace:
    """Build a workload from the flat ``workload_*`` config keys."""
    if kind == "idle":
        return idle(duration_s)
    if kind == "constant":
        return constant(high_w, duration_s, cpu_share)
    if kind == "ramp":
        return ramp(low_w, high_w, duration_s, cpu_share)
    if kind == "square":
        return duty_cycle(low_w, high_w, period_s, duty, duration_s, 0.0, cpu_share)
    if kind == "duty":
        return duty_cycle(low_w, high_w, period_s, duty, duration_s, ramp_s, cpu_share)
    raise ValueError(f"unknown workload kind {kind!r}")
