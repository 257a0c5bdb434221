"""Command-line entry point: ``sttguard run | sweep | gen-trace``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ENV_PREFIX, load_config
from .errors import ReportWriteError, SimulatorError
from .harness import AXES, resolve_trace, run, sweep, sweep_table
from .metrics import emit_report, write_text
from .tracegen import gen_trace, spec_header, write_trace

EPILOG = f"""\
Config values can be overridden with environment variables named
{ENV_PREFIX}<SECTION>__<KEY>, e.g. {ENV_PREFIX}LLC__READ_LATENCY=20 or {ENV_PREFIX}POLICY=bypass.
Exit status: 0 ok, 2 config error, 3 trace error, 4 invariant violation,
5 output not writable.
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sttguard", epilog=EPILOG,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one trace")
    p.add_argument("--config", help="flat key = value config file (defaults if omitted)")
    p.add_argument("--trace", help="trace file; overrides trace.file")
    p.add_argument("--out", help="report path (stdout if omitted)")
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("sweep", help="run one axis of scenarios plus a baseline")
    p.add_argument("--config")
    p.add_argument("--trace")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=("json", "csv"), default="csv",
                   help="format of the per-run reports next to sweep.csv")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("gen-trace", help="write a synthetic trace")
    p.add_argument("--spec", help="config file whose trace.* keys describe the trace")
    p.add_argument("--seed", type=int, default=None, help="defaults to sim.seed")
    p.add_argument("--out", required=True)
    return parser


def cmd_run(args) -> int:
    config = load_config(args.config)
    report = run(config, resolve_trace(config, args.trace))
    text = emit_report(report, args.format)
    if args.out:
        write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    trace = resolve_trace(config, args.trace)
    results = sweep(config, trace, args.axis, jobs=args.jobs)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportWriteError(f"cannot create {out}: {exc}") from exc
    for point, report in results:
        write_text(out / f"{point.axis}_{point.value}.{args.format}", emit_report(report, args.format))
    write_text(out / "sweep.csv", sweep_table(results))
    return 0


def cmd_gen_trace(args) -> int:
    config = load_config(args.spec)
    seed = config.seed if args.seed is None else args.seed
    spec = config.trace_spec()
    write_trace(args.out, gen_trace(spec, seed), spec_header(spec, seed))
    return 0


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gen-trace": cmd_gen_trace}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SimulatorError as exc:
        print(f"sttguard: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
