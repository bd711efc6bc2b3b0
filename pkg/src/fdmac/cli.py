"""Command-line front end: ``fdmac analyze | sweep | validate``.

Exit codes: 0 success, 1 usage error, 2 solver failure, 3 I/O failure,
4 validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import analytic
from .experiment import (
    Engine,
    ExperimentSpec,
    execute,
    gnuplot_script,
    load_config,
    preset,
    render_csv,
    validate,
)
from .params import ConfigError, Mode, ModelDomainError, ProtocolParams, SolverError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2
EXIT_IO = 3
EXIT_VALIDATION = 4

_MODES = {"fd": (Mode.FULL_DUPLEX,), "csma": (Mode.CSMA_CA,), "both": (Mode.FULL_DUPLEX, Mode.CSMA_CA)}
_ENGINES = {
    "analytic": frozenset({Engine.ANALYTIC}),
    "sim": frozenset({Engine.SIMULATION}),
    "both": frozenset({Engine.ANALYTIC, Engine.SIMULATION}),
}

# command-line name -> ProtocolParams field
_PARAM_FLAGS = {
    "users": "m_users",
    "packet_len": "packet_len",
    "cw_min": "cw_min",
    "w_max": "w_max",
    "pf": "p_false_alarm",
    "pm": "p_miss",
    "difs": "difs",
}


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment file (object or array of objects)")
    p.add_argument("--preset", choices=("fig3", "fig4"))
    p.add_argument("--mode", choices=tuple(_MODES))
    p.add_argument("--engine", choices=tuple(_ENGINES))
    p.add_argument("--seed", type=int, help="seed of the first replication (u64)")
    p.add_argument("--replications", type=int)
    p.add_argument("--warmup", type=int, help="warm-up transmission attempts")
    p.add_argument("--measure", type=int, help="measured transmission attempts")
    p.add_argument("--out", help="output CSV path (default: standard output)")
    p.add_argument("--tolerance", type=float, default=0.01, help="validate: max |sim - analytic|")
    p.add_argument("--no-timestamp", action="store_true", help="omit the timestamp line from the CSV")
    p.add_argument("--values", help="comma-separated sweep values overriding the preset/config grid")
    p.add_argument("--gnuplot", metavar="PATH", help="also write a gnuplot script plotting the CSV")
    p.add_argument("--jobs", type=int, help="worker processes for simulation runs")
    _add_param_flags(p)


def _add_param_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario overrides")
    g.add_argument("--users", type=int)
    g.add_argument("--packet-len", type=int)
    g.add_argument("--cw-min", type=int)
    g.add_argument("--w-max", type=int)
    g.add_argument("--cw-max", type=int, help="fix CW_max; w_max follows cw_min")
    g.add_argument("--pf", type=float, help="false-alarm probability per slot")
    g.add_argument("--pm", type=float, help="miss-detection probability per slot")
    g.add_argument("--difs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdmac", description="FD-MAC saturation throughput: analysis and simulation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="solve the model for one scenario and print a JSON report")
    a.add_argument("--config", help="JSON file with ProtocolParams fields (or an experiment with a 'base')")
    a.add_argument("--preset", choices=("fig3", "fig4"), help="start from a preset's base scenario")
    a.add_argument("--mode", choices=tuple(_MODES), default="fd")
    _add_param_flags(a)

    s = sub.add_parser("sweep", help="run a sweep and write one CSV row per point")
    _add_common(s)
    v = sub.add_parser("validate", help="compare simulation with analysis at every sweep point")
    _add_common(v)
    return parser


def _param_overrides(args) -> dict:
    out = {}
    for flag, name in _PARAM_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            out[name] = val
    return out


def _params_for_analyze(args) -> ProtocolParams:
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
        if isinstance(doc, list):
            doc = doc[0]
        base = ProtocolParams.from_dict(doc.get("base", doc))
    elif args.preset:
        base = preset(args.preset)[0].base
    else:
        base = ProtocolParams()
    overrides = _param_overrides(args)
    if args.cw_max is not None:
        cw_min = overrides.get("cw_min", base.cw_min)
        ratio = args.cw_max // cw_min
        if ratio * cw_min != args.cw_max or ratio & (ratio - 1):
            raise ConfigError(f"cw_max={args.cw_max} is not cw_min={cw_min} times a power of two")
        overrides["w_max"] = ratio.bit_length() - 1
    return replace(base, **overrides)


def cmd_analyze(args) -> int:
    params = _params_for_analyze(args)
    reports = []
    for mode in _MODES[args.mode]:
        p = replace(params, mode=mode)
        sol, rep = analytic.analyze(p)
        reports.append({"params": p.to_dict(), **rep.to_dict(), "solver": sol.to_dict()})
    out = reports[0] if len(reports) == 1 else reports
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _specs(args, validating: bool) -> list[ExperimentSpec]:
    if args.config and args.preset:
        raise UsageError("--config and --preset are mutually exclusive")
    if args.config:
        specs = load_config(args.config)
    elif args.preset:
        specs = preset(args.preset)
    else:
        raise UsageError("one of --config or --preset is required")
    overrides = {}
    if args.mode:
        overrides["modes"] = _MODES[args.mode]
    elif validating:
        overrides["modes"] = _MODES["fd"]
    if args.engine:
        overrides["engines"] = _ENGINES[args.engine]
    elif validating:
        overrides["engines"] = _ENGINES["both"]
    for flag, field in (("seed", "seed_base"), ("replications", "replications"), ("warmup", "warmup"), ("measure", "measure")):
        val = getattr(args, flag)
        if val is not None:
            overrides[field] = val
    if args.out:
        overrides["output_path"] = args.out
    if args.cw_max is not None:
        overrides["cw_max"] = args.cw_max
    out = []
    for spec in specs:
        changes = dict(overrides)
        if args.values:
            changes["sweep_values"] = tuple(float(x) for x in args.values.split(","))
        base_changes = _param_overrides(args)
        if base_changes:
            changes["base"] = replace(spec.base, **base_changes)
        out.append(replace(spec, **changes) if changes else spec)
    if validating:
        for spec in out:
            if spec.engines != _ENGINES["both"]:
                raise ConfigError("validate needs both the analytic and the simulation engine")
    return out


def _emit(args, specs, rows) -> None:
    text = render_csv(rows, timestamp=not args.no_timestamp)
    path = specs[0].output_path
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.gnuplot:
        if not path:
            raise UsageError("--gnuplot needs --out (the script references the CSV file)")
        xlabel = specs[0].sweep_variable.value
        with open(args.gnuplot, "w") as fh:
            fh.write(gnuplot_script(path, rows, xlabel=xlabel))


def _check_writable(args, specs) -> None:
    for path in (specs[0].output_path, args.gnuplot):
        if path:
            with open(path, "a"):
                pass


def cmd_sweep(args) -> int:
    specs = _specs(args, validating=False)
    _check_writable(args, specs)
    rows = execute(specs, jobs=args.jobs)
    _emit(args, specs, rows)
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"solver failure at {r.sweep_name} {r.sweep_value} {r.mode.value}: {r.error}", file=sys.stderr)
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_validate(args) -> int:
    specs = _specs(args, validating=True)
    _check_writable(args, specs)
    rows = execute(specs, jobs=args.jobs)
    if specs[0].output_path:
        _emit(args, specs, rows)
    points = validate(rows, tolerance=args.tolerance)
    report = {
        "tolerance": args.tolerance,
        "passed": bool(points) and all(p.passed for p in points),
        "points": [p.to_dict() for p in points],
        "solver_failures": [r.to_dict() for r in rows if r.error],
    }
    print(json.dumps(report, indent=2))
    for p in points:
        status = "PASS" if p.passed else "FAIL"
        print(
            f"{status} {p.sweep_name} {p.mode.value} {p.sweep_value}: sim={p.simulated:.5f} "
            f"analytic={p.analytic:.5f} |d|={p.delta:.5f}",
            file=sys.stderr,
        )
    if report["solver_failures"]:
        return EXIT_SOLVER
    return EXIT_OK if report["passed"] else EXIT_VALIDATION


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"analyze": cmd_analyze, "sweep": cmd_sweep, "validate": cmd_validate}
    try:
        return handlers[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"fdmac: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, ModelDomainError) as exc:
        if isinstance(exc, ModelDomainError):
            print(f"fdmac: model domain error: {exc}", file=sys.stderr)
            return EXIT_SOLVER
        print(f"fdmac: solver failure: {exc} (last iterate {exc.last_iterate}, residual {exc.residual})", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"fdmac: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:  # malformed JSON and similar
        print(f"fdmac: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
