"""capstep command line: calibrate, run push experiments, analyze logs.

Exit codes: 0 success, 2 invalid input (config, files, arguments),
3 runtime failure (no limit cycle, walker keeps falling).
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from capstep import analysis, config
from capstep.balance import ControllerKind
from capstep.calibration import CalibrationResult, NoLimitCycle, calibrate
from capstep.experiment import ExperimentConfig, LogFormatError, read_log, run_experiment, write_log
from capstep.learning import GridFormatError

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def log_stem(kind: ControllerKind) -> str:
    return kind.value.replace("+", "_")


def _effective(args, extra=()) -> dict:
    try:
        return config.resolve(args.config, list(args.set or ()) + list(extra))
    except config.ConfigError as exc:
        raise CliError(str(exc)) from None


def cmd_calibrate(args) -> int:
    cfg = _effective(args)
    if args.print_config:
        return _print(cfg)
    try:
        result = calibrate(config.plant_config(cfg), config.nominal(cfg),
                           n_steps=int(cfg["calibration"]["n_steps"]), seed=int(cfg["calibration"]["seed"]))
    except NoLimitCycle as exc:
        raise CliError(f"calibration failed: {exc}", EXIT_RUNTIME) from None
    out = Path(args.out)
    try:
        result.save(out)
    except OSError as exc:
        raise CliError(f"{out}: cannot write ({exc.strerror})") from None
    g = result.gait
    print(f"alpha = {g.alpha:.6f} m, delta = {g.delta:.6f} m, c = {g.c} 1/s -> {out}")
    return EXIT_OK


def _run_one(cfg: dict, kind_value: str, gait_dict: dict, out: str, compress: bool) -> str:
    kind = ControllerKind(kind_value)
    cal = CalibrationResult.from_dict(gait_dict)
    ex = cfg["experiment"]
    ecfg = ExperimentConfig(
        kind, cal.gait, cal.nominal, n_pushes=int(ex["n_pushes"]),
        impulse_range=tuple(float(v) for v in ex["impulse_range"]), seed=int(ex["seed"]),
        plant=config.plant_config(cfg), grid=config.grid_spec(cfg),
        freeze_learning=bool(ex["freeze_learning"]), initial_side=ex["initial_side"])
    log = run_experiment(ecfg)
    path = write_log(log, Path(out) / log_stem(kind), compress=compress)
    return (f"{kind.value:<22} falls {log.fall_count:4d}/{len(log.pushes)}  "
            f"min falling impulse {analysis.min_falling_impulse(log):.3f} Ns -> {path}")


def cmd_run(args) -> int:
    extra = [{"experiment": {"seed": args.seed}}] if args.seed is not None else []
    cfg = _effective(args, extra)
    if args.print_config:
        return _print(cfg)
    if args.controllers == "all":
        kinds = list(ControllerKind)
    elif args.controllers is not None:
        raise CliError(f"--controllers: expected 'all', got {args.controllers!r}")
    else:
        try:
            kinds = [ControllerKind.parse(args.controller)]
        except ValueError as exc:
            raise CliError(str(exc)) from None
    try:
        cal = CalibrationResult.load(args.gait)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    try:
        config.plant_config(cfg).validate(cal.gait.alpha)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"{out}: cannot create ({exc.strerror})") from None
    jobs = [(cfg, k.value, cal.to_dict(), str(out), args.compress) for k in kinds]
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                lines = list(pool.map(_run_one, *zip(*jobs)))
        else:
            lines = [_run_one(*j) for j in jobs]
    except (RuntimeError, NoLimitCycle) as exc:
        raise CliError(str(exc), EXIT_RUNTIME) from None
    except OSError as exc:
        raise CliError(f"cannot write logs: {exc}") from None
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _effective(args)
    if args.print_config:
        return _print(cfg)
    if not args.logs:
        raise CliError("analyze: at least one log is required")
    logs = []
    for p in args.logs:
        try:
            logs.append(read_log(p))
        except (LogFormatError, GridFormatError) as exc:
            raise CliError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.artifact == "fallprob":
            bw = float(cfg["analysis"]["bin_width"])
            tables = []
            for p, lg in zip(args.logs, logs):
                try:
                    tables.append(analysis.fall_probability(lg, bw))
                except ValueError as exc:
                    raise CliError(f"{p}: {exc}") from None
            written = analysis.write_fall_probability(tables, out)
        elif args.artifact == "heatmap":
            maps = [analysis.build_heatmap(lg, config.grid_spec(cfg)) for lg in logs]
            written = analysis.write_heatmaps(maps, out)
            for hm in maps:
                print(f"{hm.controller:<22} falls {hm.falls_counted:4d}  region B {hm.region_b_fraction:.3f}")
        else:
            floor = float(cfg["analysis"]["efficiency_floor"])
            stats = []
            for p, lg in zip(args.logs, logs):
                try:
                    stats.append(analysis.energy_stats(lg, floor))
                except ValueError as exc:
                    raise CliError(f"{p}: {exc}") from None
            written = analysis.write_energy(stats, out)
            for st in stats:
                if st.efficiency is not None:
                    print(f"{st.controller:<22} efficiency {st.efficiency:6.1f} %  "
                          f"(second half {st.efficiency_late:6.1f} %)")
    except OSError as exc:
        raise CliError(f"cannot write outputs: {exc}") from None
    for w in written:
        print(w)
    return EXIT_OK


def _print(cfg: dict) -> int:
    print(json.dumps(cfg, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config layered over the built-in defaults")
    common.add_argument("--set", action="append", metavar="PATH=VALUE",
                        help="override one field, e.g. plant.latency=0.03 (repeatable)")
    common.add_argument("--print-config", action="store_true",
                        help="print the effective config and exit")

    parser = argparse.ArgumentParser(prog="capstep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", parents=[common], help="identify alpha and delta from open-loop walking")
    p.add_argument("--out", default="gait_params.json")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", parents=[common], help="run the push experiment")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--controller", default=ControllerKind.TIMING_STEP_LEARNING.value,
                       help="one of: " + ", ".join(k.value for k in ControllerKind))
    group.add_argument("--controllers", help="'all' runs the four controllers on the same pushes")
    p.add_argument("--gait", default="gait_params.json", help="calibration output")
    p.add_argument("--seed", type=int, help="overrides experiment.seed")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--compress", action="store_true", help="gzip the log CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", parents=[common], help="fall probability, heat map or energy statistics")
    p.add_argument("logs", nargs="*", help="log CSV files written by 'run'")
    p.add_argument("--artifact", required=True, choices=["fallprob", "heatmap", "energy"])
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
