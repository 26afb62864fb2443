"""Two-rail power telemetry: parsing, validation, resampling and energy accounting.

A trace holds CPU and GPU rail voltage/current samples. Rail power is always
derived as V*I so the stored powers can never drift from the raw channels.
Energy is the trapezoidal integral of the piecewise-linear power signal and
is reported in mWh (joules / 3.6).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import IO, Iterator, Literal

import numpy as np

from .errors import (
    EmptyTrace,
    MalformedRow,
    NonMonotonicTime,
    RangeOutsideTrace,
    WindowTooSmall,
)

DEFAULT_RATE = 2000.0
HEADER = ("t_s", "cpu_v", "cpu_i", "gpu_v", "gpu_i")
JOULES_PER_MWH = 3.6
# slack for window bounds computed as k * dt
SPAN_TOL = 1e-9

Channel = Literal["cpu", "gpu", "total"]


@dataclass(frozen=True)
class PowerSample:
    t: float
    cpu_v: float
    cpu_i: float
    gpu_v: float
    gpu_i: float
    cpu_p: float
    gpu_p: float


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class PowerTrace:
    """Immutable, validated two-rail trace.

    Irregular sampling is accepted; ``irregular`` is set when the median
    sample gap is more than 10% away from ``1 / nominal_rate``.
    """

    __slots__ = ("t", "cpu_v", "cpu_i", "gpu_v", "gpu_i", "cpu_p", "gpu_p", "nominal_rate")

    def __init__(self, t, cpu_v, cpu_i, gpu_v, gpu_i, nominal_rate: float = DEFAULT_RATE):
        cols = [np.asarray(c, dtype=np.float64).ravel() for c in (t, cpu_v, cpu_i, gpu_v, gpu_i)]
        n = cols[0].size
        if n == 0:
            raise EmptyTrace("trace has no samples")
        if any(c.size != n for c in cols):
            raise MalformedRow("channel lengths differ")
        for name, c in zip(HEADER, cols):
            if not np.all(np.isfinite(c)):
                raise MalformedRow(f"non-finite value in {name}")
            if np.any(c < 0):
                raise MalformedRow(f"negative value in {name}")
        if n > 1:
            gaps = np.diff(cols[0])
            if np.any(gaps <= 0):
                k = int(np.argmax(gaps <= 0)) + 1
                raise NonMonotonicTime(f"t not strictly increasing at sample {k} (t={cols[0][k]!r})")
        if not nominal_rate > 0:
            raise ValueError("nominal_rate must be > 0")
        object.__setattr__(self, "t", _frozen(cols[0]))
        object.__setattr__(self, "cpu_v", _frozen(cols[1]))
        object.__setattr__(self, "cpu_i", _frozen(cols[2]))
        object.__setattr__(self, "gpu_v", _frozen(cols[3]))
        object.__setattr__(self, "gpu_i", _frozen(cols[4]))
        object.__setattr__(self, "cpu_p", _frozen(cols[1] * cols[2]))
        object.__setattr__(self, "gpu_p", _frozen(cols[3] * cols[4]))
        object.__setattr__(self, "nominal_rate", float(nominal_rate))

    def __setattr__(self, name, value):
        raise AttributeError("PowerTrace is immutable")

    @classmethod
    def from_power(cls, t, cpu_p, gpu_p, volts: float = 5.0, nominal_rate: float = DEFAULT_RATE) -> PowerTrace:
        """Build a trace from rail powers at a fixed rail voltage."""
        t = np.asarray(t, dtype=np.float64)
        cpu_p = np.broadcast_to(np.asarray(cpu_p, dtype=np.float64), t.shape)
        gpu_p = np.broadcast_to(np.asarray(gpu_p, dtype=np.float64), t.shape)
        v = np.full(t.shape, float(volts))
        return cls(t, v, cpu_p / volts, v, gpu_p / volts, nominal_rate=nominal_rate)

    def __len__(self) -> int:
        return self.t.size

    def __iter__(self) -> Iterator[PowerSample]:
        for row in zip(self.t, self.cpu_v, self.cpu_i, self.gpu_v, self.gpu_i, self.cpu_p, self.gpu_p):
            yield PowerSample(*(float(x) for x in row))

    @property
    def samples(self) -> list[PowerSample]:
        return list(self)

    @property
    def total_p(self) -> np.ndarray:
        return self.cpu_p + self.gpu_p

    @property
    def start(self) -> float:
        return float(self.t[0])

    @property
    def end(self) -> float:
        return float(self.t[-1])

    @property
    def duration(self) -> float:
        return self.end - self.start

    @property
    def irregular(self) -> bool:
        if len(self) < 2:
            return False
        nominal = 1.0 / self.nominal_rate
        return abs(float(np.median(np.diff(self.t))) - nominal) > 0.1 * nominal

    def power(self, channel: Channel = "total") -> np.ndarray:
        if channel == "cpu":
            return self.cpu_p
        if channel == "gpu":
            return self.gpu_p
        if channel == "total":
            return self.total_p
        raise ValueError(f"unknown channel {channel!r}")


def parse_trace(source: IO[bytes] | IO[str] | bytes | str, nominal_rate: float = DEFAULT_RATE) -> PowerTrace:
    """Parse a ``t_s,cpu_v,cpu_i,gpu_v,gpu_i`` CSV stream.

    Lines starting with ``#`` are skipped. Any extra power columns are not
    part of the format; rows must carry exactly five fields. Timestamps are
    re-based so the first sample sits at t = 0.
    """
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw

    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise EmptyTrace("no header")
    reader = csv.reader(lines)
    header = tuple(h.strip() for h in next(reader))
    if header != HEADER:
        raise MalformedRow(f"expected header {','.join(HEADER)}, got {','.join(header)}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(HEADER):
            raise MalformedRow(f"row {lineno}: expected {len(HEADER)} fields, got {len(row)}")
        try:
            rows.append([float(x) for x in row])
        except ValueError as exc:
            raise MalformedRow(f"row {lineno}: {exc}") from None
    if not rows:
        raise EmptyTrace("header only, no samples")
    data = np.array(rows, dtype=np.float64)
    t = data[:, 0]
    if t.size > 1 and np.any(np.diff(t) <= 0):
        k = int(np.argmax(np.diff(t) <= 0)) + 1
        raise NonMonotonicTime(f"row {k + 2}: t={t[k]!r} does not follow t={t[k - 1]!r}")
    return PowerTrace(t - t[0], data[:, 1], data[:, 2], data[:, 3], data[:, 4], nominal_rate=nominal_rate)


def load_trace(path, nominal_rate: float = DEFAULT_RATE) -> PowerTrace:
    from .errors import NoSuchFile

    try:
        with open(path, "rb") as fh:
            return parse_trace(fh, nominal_rate=nominal_rate)
    except FileNotFoundError:
        raise NoSuchFile(str(path)) from None


def format_trace(trace: PowerTrace) -> str:
    buf = io.StringIO()
    buf.write(",".join(HEADER) + "\n")
    for row in zip(trace.t, trace.cpu_v, trace.cpu_i, trace.gpu_v, trace.gpu_i):
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    return buf.getvalue()


def write_trace(trace: PowerTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_trace(trace))


def _check_window(trace: PowerTrace, t0: float, t1: float) -> tuple[float, float]:
    if not (math.isfinite(t0) and math.isfinite(t1)) or t0 >= t1:
        raise RangeOutsideTrace(f"empty or invalid window [{t0}, {t1}]")
    tol = SPAN_TOL * max(1.0, abs(trace.end))
    if t0 < trace.start - tol or t1 > trace.end + tol:
        raise RangeOutsideTrace(f"[{t0}, {t1}] outside trace span [{trace.start}, {trace.end}]")
    return max(t0, trace.start), min(t1, trace.end)


def cumulative_joules(trace: PowerTrace, times, channel: Channel = "total") -> np.ndarray:
    """Energy in joules from trace start to each of ``times`` (clamped to the span).

    Exact for the linear interpolant between samples, so it agrees with
    the trapezoid rule at sample times and stays additive between them.
    """
    t = trace.t
    p = trace.power(channel)
    times = np.clip(np.asarray(times, dtype=np.float64), t[0], t[-1])
    if t.size == 1:
        return np.zeros_like(times)
    seg = np.diff(t) * (p[:-1] + p[1:]) * 0.5
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    i = np.clip(np.searchsorted(t, times, side="right") - 1, 0, t.size - 2)
    frac = (times - t[i]) / (t[i + 1] - t[i])
    p_at = p[i] + (p[i + 1] - p[i]) * frac
    return cum[i] + (times - t[i]) * (p[i] + p_at) * 0.5


def integrate_energy(trace: PowerTrace, t0: float, t1: float, channel: Channel = "total") -> float:
    """Trapezoidal energy of ``channel`` over [t0, t1], in mWh."""
    a, b = _check_window(trace, t0, t1)
    ja, jb = cumulative_joules(trace, [a, b], channel)
    return max(0.0, float(jb - ja)) / JOULES_PER_MWH


def resample(trace: PowerTrace, rate: float) -> PowerTrace:
    """Linearly interpolate voltages and currents onto a uniform grid.

    The grid starts at the first sample; the last sample is kept even when
    the span is not a whole number of periods.
    """
    if not rate > 0:
        raise ValueError("rate must be > 0")
    if len(trace) == 1:
        return PowerTrace(trace.t, trace.cpu_v, trace.cpu_i, trace.gpu_v, trace.gpu_i, nominal_rate=rate)
    n = int(math.floor(trace.duration * rate + 1e-9))
    grid = trace.start + np.arange(n + 1) / rate
    if trace.end - grid[-1] > 1e-9 / rate:
        grid = np.append(grid, trace.end)
    grid[-1] = min(grid[-1], trace.end)
    cols = [np.interp(grid, trace.t, c) for c in (trace.cpu_v, trace.cpu_i, trace.gpu_v, trace.gpu_i)]
    return PowerTrace(grid, *cols, nominal_rate=rate)


def window_stats(trace: PowerTrace, t0: float, t1: float, channel: Channel = "total") -> tuple[float, float, float]:
    """Mean, population variance and OLS slope of power over samples in [t0, t1]."""
    lo = np.searchsorted(trace.t, t0, side="left")
    hi = np.searchsorted(trace.t, t1, side="right")
    if hi - lo < 2:
        raise WindowTooSmall(f"[{t0}, {t1}] holds {hi - lo} sample(s), need 2")
    t = trace.t[lo:hi]
    p = trace.power(channel)[lo:hi]
    mean = float(p.mean())
    dp = p - mean
    var = float(np.mean(dp * dp))
    dt = t - t.mean()
    slope = float(np.dot(dt, dp) / np.dot(dt, dt))
    return mean, var, slope


def summarize(trace: PowerTrace) -> dict:
    """Duration, mean total power and per-rail energy of a whole trace."""
    if len(trace) < 2:
        energies = {"cpu": 0.0, "gpu": 0.0, "total": 0.0}
    else:
        energies = {c: integrate_energy(trace, trace.start, trace.end, c) for c in ("cpu", "gpu", "total")}
    dur = trace.duration
    mean_w = energies["total"] * JOULES_PER_MWH / dur if dur > 0 else float(trace.total_p[0])
    return {
        "samples": len(trace),
        "duration_s": dur,
        "mean_w": mean_w,
        "cpu_mwh": energies["cpu"],
        "gpu_mwh": energies["gpu"],
        "total_mwh": energies["total"],
        "irregular": trace.irregular,
    }
