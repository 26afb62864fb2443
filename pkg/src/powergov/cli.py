"""Command-line entry point: ``powergov {ingest,train,evaluate,report}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

from . import report, telemetry
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .envsim import PowerEnv
from .errors import ConfigError, DataError, NoSuchFile
from .ppo import train

log = logging.getLogger("powergov")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat YAML run config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (file for ingest)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="powergov", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate/resample a trace and print its energy summary")
    p.add_argument("trace")
    p.add_argument("--rate", type=float, help="resample to this many samples/s")
    _global_flags(p)

    p = sub.add_parser("train", help="train the controller")
    _global_flags(p)

    p = sub.add_parser("evaluate", help="compare a trained controller against a baseline")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", choices=("always_max", "always_keep", "always_min"))
    _global_flags(p)

    p = sub.add_parser("report", help="rebuild energy_report.csv from a run directory")
    _global_flags(p)
    return parser


def _load(args) -> RunConfig:
    return load_config(args.config, overrides={"seed": args.seed})


def cmd_ingest(args) -> int:
    trace = telemetry.load_trace(args.trace)
    if args.rate:
        trace = telemetry.resample(trace, args.rate)
    if args.out:
        telemetry.write_trace(trace, args.out)
    s = telemetry.summarize(trace)
    flag = " irregular" if s["irregular"] else ""
    print(f"samples={s['samples']} duration_s={s['duration_s']:.6f} mean_w={s['mean_w']:.6f} "
          f"cpu_mwh={s['cpu_mwh']:.6f} gpu_mwh={s['gpu_mwh']:.6f} total_mwh={s['total_mwh']:.6f}{flag}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    src = cfg.workload_path()
    if src is not None:
        dst = out / "workload.csv"
        if src.resolve() != dst.resolve():
            if not src.exists():
                raise NoSuchFile(str(src))
            shutil.copyfile(src, dst)
        cfg = RunConfig({**cfg.values, "workload_trace": "workload.csv"}, out)
    (out / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")

    workload = cfg.workload()
    env_cfg = cfg.env_config()
    tc = cfg.train_config()

    def log_epoch(m):
        log.info("epoch %d reward %.4f critic %.4f kl %.4f iters %d",
                 m.epoch, m.mean_reward, m.critic_loss, m.approx_kl, m.policy_iters)

    result = train(tc, lambda: PowerEnv(env_cfg, workload), on_epoch=log_epoch)
    report.export_curves(result.history, out / "curves.csv")
    save_checkpoint(out / "checkpoint.npz", result, cfg.env_hash())
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs; final mean_reward={last.mean_reward:.6f} -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load(args)
    if args.baseline:
        cfg = cfg.with_values(baseline=args.baseline)
    agent = load_checkpoint(args.checkpoint, cfg.env_hash())
    env_cfg = cfg.env_config()
    env = PowerEnv(env_cfg, cfg.workload())
    out = Path(args.out or Path(args.checkpoint).parent)
    res = report.compare_run(env, agent.actor.greedy(env_cfg.tau), cfg["baseline"], cfg["windows"],
                             seed=cfg.seed, out_dir=out)
    print(res.report.format_table())
    for name, rate in res.violation_rates.items():
        print(f"violation_rate[{name}]={rate:.6f}")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load(args)
    out = Path(args.out or ".")
    try:
        text = (out / "power_compare.csv").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise NoSuchFile(str(out / "power_compare.csv")) from None
    base, ctrl = report.read_power_compare(text)
    rep = report.energy_table(base, ctrl, cfg["windows"])
    (out / "energy_report.csv").write_text(rep.to_csv(), encoding="utf-8")
    print(rep.format_table())
    curves = out / "curves.csv"
    if curves.exists():
        hist = report.read_curves(curves)
        print(f"epochs={len(hist)} first_reward={hist[0].mean_reward:.6f} last_reward={hist[-1].mean_reward:.6f}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "evaluate": cmd_evaluate, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
