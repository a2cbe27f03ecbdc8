"""Command-line entry point: ``icc simulate`` and ``icc presets``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from . import harness
from .errors import ConfigurationError, OutputError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icc", description="Monte Carlo campaigns for GaBP ICC receivers")
    sub = parser.add_subparsers(dest="command", required=True)
    sim = sub.add_parser("simulate", help="run a scenario file or a built-in preset")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="TOML scenario file")
    src.add_argument("--preset", help="built-in scenario name (see `icc presets`)")
    sim.add_argument("--out", help="CSV output path (default: scenario output_path or stdout)")
    sim.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    sim.add_argument("--trials", type=int, help="override the number of trials per SNR point")
    sim.add_argument("--timing", action="store_true",
                     help="record wall-clock times in elapsed_ms (output is then not reproducible)")
    sub.add_parser("presets", help="list built-in scenarios")
    return parser


def _simulate(args) -> int:
    if args.threads < 1:
        raise ConfigurationError("--threads must be >= 1")
    if args.scenario:
        scenarios = [harness.load_scenario(args.scenario)]
    else:
        scenarios = harness.preset_scenarios(args.preset)
    changes = {}
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.timing:
        changes["record_timing"] = True
    scenarios = [harness.apply_env_overrides(replace(s, **changes)) for s in scenarios]

    rows = []
    for sc in scenarios:
        rows.extend(harness.run_campaign(sc, threads=args.threads))
    out = args.out or scenarios[0].output_path
    if out:
        harness.write_csv(rows, out)
    else:
        import os
        import tempfile

        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "rows.csv")
            harness.write_csv(rows, path)
            with open(path, encoding="utf-8") as fh:
                sys.stdout.write(fh.read())
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "presets":
            for name, (_, description) in harness.PRESETS.items():
                print(f"{name}\t{description}")
            return EXIT_OK
        return _simulate(args)
    except (ConfigurationError, ValueError) as exc:
        print(f"icc: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OutputError, OSError) as exc:
        print(f"icc: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
