"""Command line entry point: ``ctrlsched {run,sweep,validate}``.

Exit codes: 0 success, 1 configuration or validation failure, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import yaml

from .config import ConfigError, SimConfig, config_from_dict, config_to_dict, load_config
from .scheduler import InfeasibleMcs, Policy, select_mcs
from .sim import MetricsLog, run_experiment
from .validate import run_checks

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
SCHEDULER_CHOICES = ("control", "per", "round-robin")


@contextmanager
def atomic_write(path: Path, newline: str | None = None):
    """Write to a temp file beside ``path`` and rename it into place."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline=newline) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _resolve(args, extra: dict | None = None) -> SimConfig:
    cfg = load_config(args.config) if args.config else SimConfig()
    overrides = dict(extra or {})
    for flag, key in (("devices", "devices"), ("seed", "seed"), ("trials", "trials"),
                      ("duration", "duration")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "scheduler", None):
        overrides["policy"] = args.scheduler
    cfg = config_from_dict(overrides, base=cfg)
    select_mcs(cfg.layout(), cfg.numerology, cfg.mcs_table, cfg.payload_bits)
    return cfg


def _write_outputs(out: Path, cfg: SimConfig, summary: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with atomic_write(out / "resolved_config.yaml") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)
    with atomic_write(out / "summary.json") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args) -> int:
    cfg = _resolve(args)
    summary = run_experiment(cfg, keep_logs=True)
    logs = summary.pop("_logs")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with atomic_write(out / "metrics.csv", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("trial",) + MetricsLog.csv_header)
        for (_, _, trial), log in sorted(logs.items(), key=lambda kv: kv[0][2]):
            log.write_rows(writer, trial)
    _write_outputs(out, cfg, summary)
    for cell in summary["results"]:
        print(f"{Policy(cell['policy']).cli_name}: m={cell['devices']} "
              f"fleet_mean_distance={cell['fleet_mean_distance_mean']} "
              f"fallen={cell['fallen_total']}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("list must not be empty")
    return values


def _scheduler_list(text: str) -> list[str]:
    values = [v.strip() for v in text.split(",") if v.strip()]
    bad = [v for v in values if v not in SCHEDULER_CHOICES]
    if bad or not values:
        raise argparse.ArgumentTypeError(
            f"schedulers must be drawn from {','.join(SCHEDULER_CHOICES)}, got {text!r}")
    return values


def cmd_sweep(args) -> int:
    cfg = _resolve(args)
    devices = args.devices_list or [cfg.devices]
    for m in devices:
        config_from_dict({"devices": m}, base=cfg)
    keep = args.per_trial_metrics
    summary = run_experiment(cfg, policies=args.schedulers, devices_list=devices,
                             keep_logs=keep)
    logs = summary.pop("_logs", {})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with atomic_write(out / "sweep.csv", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("scheduler", "m", "trial", "fleet_mean_distance"))
        for row in summary["rows"]:
            writer.writerow((row["scheduler"], row["m"], row["trial"],
                             repr(row["fleet_mean_distance"])))
    if keep:
        mdir = out / "metrics"
        mdir.mkdir(exist_ok=True)
        for (m, policy, trial), log in logs.items():
            name = f"{Policy(policy).cli_name}_m{m}_t{trial}.csv"
            with atomic_write(mdir / name, newline="") as fh:
                log.write_csv(fh)
    _write_outputs(out, cfg, summary)
    print(f"wrote {len(summary['rows'])} rows to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config, validate=False) if args.config else SimConfig()
    results = run_checks(cfg)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.ok for r in results) else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrlsched",
        description="Schedule wireless control uplinks into one 5G subframe per frame.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="YAML or JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--duration", type=float, metavar="SECONDS")
        p.add_argument("--out", metavar="DIR", required=True)

    run = sub.add_parser("run", help="run one scheduler for several trials")
    common(run)
    run.add_argument("--scheduler", choices=SCHEDULER_CHOICES)
    run.add_argument("--devices", type=int)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="cross product of device counts and schedulers")
    common(sweep)
    sweep.add_argument("--devices-list", type=_int_list, metavar="M1,M2,...")
    sweep.add_argument("--schedulers", type=_scheduler_list, metavar="S1,S2,...",
                       default=list(SCHEDULER_CHOICES))
    sweep.add_argument("--per-trial-metrics", action="store_true",
                       help="also write one metrics CSV per (scheduler, m, trial)")
    sweep.set_defaults(func=cmd_sweep)

    val = sub.add_parser("validate", help="run the fast invariant checks")
    val.add_argument("--config", metavar="PATH")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ctrlsched: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleMcs as exc:
        print(f"ctrlsched: infeasible MCS: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # pragma: no cover - last-resort diagnostic
        print(f"ctrlsched: error: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
