"""Command-line entry point.

Subcommands: gen-data, train, experiment, measure, compare, plot,
schedule-dump. Run configuration comes from an optional JSON file
(--config) and every RunConfig field can be overridden with a
--field-name=value flag. The MMVAE_LAB_OUT environment variable sets the
default output root.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .data import SyntheticParams, generate_synthetic_raw, write_csv
from .harness import (
    RunConfig,
    compare_schedules,
    experiment_from_manifest,
    prepare_data,
    run_experiment,
    train_run,
)
from .layout import default_layout
from .measures import measure_report
from .model import load_checkpoint
from .schedules import SCHEDULE_KINDS, BetaSchedule, schedule_table

OUT_ROOT_ENV = "MMVAE_LAB_OUT"

# config fields whose flag accepts the literal "none"
_OPTIONAL_FIELDS = {"batch_size": int, "tail_start": int, "checkpoint_cadence": int,
                    "csv_path": str}


def _field_parser(field: dataclasses.Field):
    if field.name in _OPTIONAL_FIELDS:
        base = _OPTIONAL_FIELDS[field.name]

        def parse(text: str):
            return None if text.lower() == "none" else base(text)

        return parse
    return type(field.default)


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("run configuration overrides")
    for field in dataclasses.fields(RunConfig):
        flag = "--" + field.name.replace("_", "-")
        if field.name == "out_dir":
            continue  # exposed as --out on the relevant subcommands
        if isinstance(field.default, bool):
            group.add_argument(flag, dest=field.name, default=argparse.SUPPRESS,
                               action=argparse.BooleanOptionalAction)
        else:
            group.add_argument(flag, dest=field.name, default=argparse.SUPPRESS,
                               type=_field_parser(field), metavar="V")


def build_config(args: argparse.Namespace, out_dir: str | None = None) -> RunConfig:
    data: dict = {}
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as f:
            data.update(json.load(f))
    field_names = {f.name for f in dataclasses.fields(RunConfig)}
    for name in field_names:
        if hasattr(args, name):
            data[name] = getattr(args, name)
    if out_dir is not None:
        data["out_dir"] = out_dir
    return RunConfig.from_dict(data)


def _default_out(name: str) -> str:
    return str(Path(os.environ.get(OUT_ROOT_ENV, "runs")) / name)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mmvae-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic raw dataset CSV")
    p.add_argument("--out", required=True, help="target CSV path")
    p.add_argument("--seed", type=int, default=1234)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--noise", type=float, default=SyntheticParams.noise)
    p.add_argument("--dt", type=float, default=SyntheticParams.dt)
    p.add_argument("--contact-threshold", type=float, default=SyntheticParams.contact_threshold)
    p.add_argument("--episode-length", type=int, default=SyntheticParams.episode_length)

    p = sub.add_parser("train", help="one seeded training run")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="run directory")
    p.add_argument("--run-seed", type=int, default=None)
    add_config_flags(p)

    p = sub.add_parser("experiment", help="train all runs of one schedule and aggregate")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--from-manifest", help="reproduce the experiment recorded in a manifest")
    p.add_argument("--out", help="experiment directory")
    p.add_argument("--plot", action="store_true", help="also render SVG figures")
    add_config_flags(p)

    p = sub.add_parser("measure", help="re-evaluate the measures for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="JSON config file describing the dataset/eval set")
    p.add_argument("--out", help="output CSV (default: stdout)")
    add_config_flags(p)

    p = sub.add_parser("compare", help="window means across completed experiments")
    p.add_argument("dirs", nargs="+", help="experiment directories")
    p.add_argument("--out", required=True, help="directory for comparison CSVs")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("plot", help="render SVG figures from experiment CSVs")
    p.add_argument("--experiment", help="experiment directory")
    p.add_argument("--comparison", help="directory holding comparison.csv")
    p.add_argument("--schedule-csv", help="schedule-dump CSV")
    p.add_argument("--out", help="figures directory (default: <dir>/figures)")

    p = sub.add_parser("schedule-dump", help="sample a beta schedule to CSV")
    p.add_argument("--schedule", choices=SCHEDULE_KINDS, required=True)
    p.add_argument("--total-epochs", type=int, default=80000)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--warmup-epochs", type=int, default=1000)
    p.add_argument("--cycle-length", type=int, default=80)
    p.add_argument("--tail-start", type=int, default=None)
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    return _dispatch(args)


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "gen-data":
        params = SyntheticParams(noise=args.noise, dt=args.dt,
                                 contact_threshold=args.contact_threshold,
                                 episode_length=args.episode_length)
        raw = generate_synthetic_raw(args.seed, args.samples, params)
        write_csv(args.out, raw, default_layout())
        print(f"wrote {args.samples} samples to {args.out}")
        return 0

    if args.command == "train":
        out = args.out or _default_out("run")
        config = build_config(args, out_dir=out)
        seed = args.run_seed if args.run_seed is not None else config.base_seed
        status = train_run(config, seed, out)
        print(f"run seed={status['seed']}: {status['status']}"
              + (f" ({status['error']})" if status["error"] else ""))
        return 0 if status["status"] == "completed" else 1

    if args.command == "experiment":
        if args.from_manifest:
            _, manifest = experiment_from_manifest(args.from_manifest, args.out)
        else:
            out = args.out or _default_out(getattr(args, "schedule_kind", "experiment"))
            config = build_config(args, out_dir=out)
            _, manifest = run_experiment(config)
        out_dir = manifest["config"]["out_dir"]
        done = sum(1 for r in manifest["runs"] if r["status"] == "completed")
        print(f"experiment {manifest['config']['schedule_kind']}: "
              f"{done}/{len(manifest['runs'])} runs completed -> {out_dir}")
        if args.plot:
            from .plotting import render_experiment_figures
            for path in render_experiment_figures(out_dir):
                print(f"figure: {path}")
        return 0

    if args.command == "measure":
        config = build_config(args)
        model, epoch, _ = load_checkpoint(args.checkpoint)
        _, eval_ds = prepare_data(config)
        report = measure_report(model, eval_ds, epoch=epoch,
                                expected_size=config.eval_set_size)
        lines = ["epoch,schedule,run_seed,measure,scope,modality,value"]
        for meas, scope, modality, value in report.rows():
            lines.append(f"{epoch},{config.schedule_kind},,{meas},{scope},{modality},{value!r}")
        text = "\n".join(lines) + "\n"
        if args.out:
            Path(args.out).parent.mkdir(parents=True, exist_ok=True)
            Path(args.out).write_text(text)
            print(f"wrote {args.out}")
        else:
            sys.stdout.write(text)
        return 0

    if args.command == "compare":
        compare_schedules(args.dirs, out_dir=args.out)
        print(f"wrote comparison CSVs to {args.out}")
        if args.plot:
            from .plotting import plot_comparison
            print(f"figure: {plot_comparison(args.out, Path(args.out) / 'comparison.svg')}")
        return 0

    if args.command == "plot":
        from .plotting import plot_comparison, plot_schedule, render_experiment_figures

        produced = []
        if args.experiment:
            produced += render_experiment_figures(args.experiment, args.out)
        if args.comparison:
            out = Path(args.out) if args.out else Path(args.comparison)
            produced.append(plot_comparison(args.comparison, out / "comparison.svg"))
        if args.schedule_csv:
            out = Path(args.out) if args.out else Path(args.schedule_csv).parent
            produced.append(plot_schedule(args.schedule_csv, out / "schedule.svg"))
        if not produced:
            print("nothing to plot: pass --experiment, --comparison, or --schedule-csv",
                  file=sys.stderr)
            return 2
        for path in produced:
            print(f"figure: {path}")
        return 0

    if args.command == "schedule-dump":
        schedule = BetaSchedule(kind=args.schedule, total_epochs=args.total_epochs,
                                warmup_epochs=args.warmup_epochs,
                                cycle_length=args.cycle_length, tail_start=args.tail_start)
        rows = schedule_table(schedule, args.stride)
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write("epoch,beta\n")
            for epoch, beta in rows:
                f.write(f"{epoch},{beta!r}\n")
        print(f"wrote {len(rows)} rows to {path}")
        return 0

    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    raise SystemExit(main())
