"""Energy comparison tables, training-curve export and with/without power traces."""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from .envsim import PowerEnv, Policy, baseline_policy, run_episode
from .errors import SinkError, TraceTooShort
from .ppo import EpochMetrics
from .telemetry import SPAN_TOL, PowerTrace, integrate_energy

DEFAULT_WINDOWS = (1.0, 10.0, 30.0, 60.0, 90.0)
CURVE_COLUMNS = ("epoch", "mean_reward", "critic_loss", "mean_log_prob", "actor_loss", "approx_kl", "policy_iters")


def _fmt(x) -> str:
    return repr(float(x)) if not isinstance(x, (int, np.integer)) else str(int(x))


def improvement_pct(baseline_mwh: float, controlled_mwh: float) -> float:
    return (baseline_mwh - controlled_mwh) / baseline_mwh * 100.0


@dataclass(frozen=True)
class EnergyReport:
    windows: tuple[float, ...]
    baseline_mwh: tuple[float, ...]
    controlled_mwh: tuple[float, ...]
    improvement_pct: tuple[float, ...]

    @classmethod
    def from_energies(cls, windows: Sequence[float], baseline: Sequence[float], controlled: Sequence[float]) -> EnergyReport:
        if not (len(windows) == len(baseline) == len(controlled)):
            raise ValueError("windows, baseline and controlled must have equal length")
        for w, b in zip(windows, baseline):
            if not b > 0:
                raise ValueError(f"baseline energy must be > 0 (window {w} s has {b} mWh)")
        imp = tuple(improvement_pct(b, c) for b, c in zip(baseline, controlled))
        return cls(tuple(map(float, windows)), tuple(map(float, baseline)), tuple(map(float, controlled)), imp)

    def rows(self):
        return zip(self.windows, self.baseline_mwh, self.controlled_mwh, self.improvement_pct)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("window_s,baseline_mwh,controlled_mwh,improvement_pct\n")
        for row in self.rows():
            buf.write(",".join(_fmt(x) for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> EnergyReport:
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls.from_energies(
            [float(r["window_s"]) for r in rows],
            [float(r["baseline_mwh"]) for r in rows],
            [float(r["controlled_mwh"]) for r in rows],
        )

    def format_table(self) -> str:
        head = f"{'window':>8} {'baseline mWh':>14} {'controlled mWh':>15} {'improvement':>12}"
        lines = [head]
        for w, b, c, p in self.rows():
            lines.append(f"{w:>7g}s {b:>14.3f} {c:>15.3f} {p:>11.3f}%")
        return "\n".join(lines)


def energy_table(baseline_trace: PowerTrace, controlled_trace: PowerTrace,
                 windows: Sequence[float] = DEFAULT_WINDOWS) -> EnergyReport:
    """Cumulative energy from trace start for each window, both traces."""
    longest = max(windows)
    for name, tr in (("baseline", baseline_trace), ("controlled", controlled_trace)):
        if tr.duration + SPAN_TOL * max(1.0, tr.end) < longest:
            raise TraceTooShort(f"{name} trace covers {tr.duration:g} s, window needs {longest:g} s")
    base = [integrate_energy(baseline_trace, baseline_trace.start, baseline_trace.start + w) for w in windows]
    ctrl = [integrate_energy(controlled_trace, controlled_trace.start, controlled_trace.start + w) for w in windows]
    return EnergyReport.from_energies(windows, base, ctrl)


# ----------------------------------------------------------------- curves

def curves_csv(history: Sequence[EpochMetrics]) -> str:
    if not history:
        raise ValueError("empty history")
    buf = io.StringIO()
    buf.write(",".join(CURVE_COLUMNS) + "\n")
    for m in history:
        buf.write(",".join(_fmt(getattr(m, c)) for c in CURVE_COLUMNS) + "\n")
    return buf.getvalue()


def _write_text(sink, text: str) -> None:
    try:
        if isinstance(sink, (str, os.PathLike)):
            with open(sink, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        else:
            sink.write(text)
    except OSError as exc:
        raise SinkError(str(exc)) from exc


def export_curves(history: Sequence[EpochMetrics], sink: str | os.PathLike | IO[str]) -> None:
    _write_text(sink, curves_csv(history))


def read_curves(source: str | os.PathLike | IO[str]) -> list[EpochMetrics]:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append(EpochMetrics(
            epoch=int(r["epoch"]),
            mean_reward=float(r["mean_reward"]),
            critic_loss=float(r["critic_loss"]),
            actor_loss=float(r.get("actor_loss", "nan")),
            mean_log_prob=float(r["mean_log_prob"]),
            approx_kl=float(r.get("approx_kl", "nan")),
            policy_iters=int(r.get("policy_iters", 0)),
        ))
    return out


# --------------------------------------------------------------- compare

def power_compare_csv(baseline: PowerTrace, controlled: PowerTrace) -> str:
    if len(baseline) != len(controlled) or not np.array_equal(baseline.t, controlled.t):
        raise ValueError("baseline and controlled traces must share a time grid")
    buf = io.StringIO()
    buf.write("t_s,baseline_w,controlled_w\n")
    for t, b, c in zip(baseline.t, baseline.total_p, controlled.total_p):
        buf.write(f"{_fmt(t)},{_fmt(b)},{_fmt(c)}\n")
    return buf.getvalue()


def read_power_compare(text: str) -> tuple[PowerTrace, PowerTrace]:
    rows = np.array([[float(x) for x in r] for r in list(csv.reader(io.StringIO(text)))[1:]])
    t = rows[:, 0]
    # totals are stored; split is not needed for energy accounting
    base = PowerTrace.from_power(t, rows[:, 1], 0.0)
    ctrl = PowerTrace.from_power(t, rows[:, 2], 0.0)
    return base, ctrl


@dataclass
class CompareResult:
    report: EnergyReport
    violation_rates: dict[str, float]
    baseline_trace: PowerTrace
    controlled_trace: PowerTrace

    def violations_csv(self) -> str:
        lines = ["policy,violation_rate"]
        lines += [f"{k},{_fmt(v)}" for k, v in self.violation_rates.items()]
        return "\n".join(lines) + "\n"


def compare_run(env: PowerEnv, policy: Policy, baseline: str | Policy = "always_max",
                windows: Sequence[float] = DEFAULT_WINDOWS, seed: int | None = 0,
                out_dir: str | os.PathLike | None = None) -> CompareResult:
    """Run the controlled and baseline policies over the same workload and compare energy.

    With ``out_dir`` the two power traces are written to ``power_compare.csv``
    and the table to ``energy_report.csv``.
    """
    base_policy = baseline_policy(baseline) if isinstance(baseline, str) else baseline
    ctrl = run_episode(env, policy, seed)
    base = run_episode(env, base_policy, seed)
    report = energy_table(base.power, ctrl.power, windows)
    result = CompareResult(
        report,
        {"controlled": ctrl.violation_rate, "baseline": base.violation_rate},
        base.power,
        ctrl.power,
    )
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_text(os.path.join(out_dir, "power_compare.csv"), power_compare_csv(base.power, ctrl.power))
        _write_text(os.path.join(out_dir, "energy_report.csv"), report.to_csv())
        _write_text(os.path.join(out_dir, "violations.csv"), result.violations_csv())
    return result


def moving_average(values: Iterable[float], window: int) -> np.ndarray:
    """Trailing mean; entry i averages values[max(0, i - window + 1) : i + 1]."""
    v = np.asarray(list(values), dtype=np.float64)
    c = np.concatenate(([0.0], np.cumsum(v)))
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
