"""``simulate`` command line entry point.

Exit codes: 0 on success, 1 for configuration errors, 2 for runtime errors.
Results are only written once every point has been evaluated.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import time

from .harness import ConfigError, PRESETS, load_config, preset_configs, records_to_csv, run_all, write_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simulate",
        description="Monte Carlo sum rates of statistical-CSI LEO massive MIMO transmission.",
    )
    parser.add_argument("--config", metavar="PATH", help="TOML experiment configuration")
    parser.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in experiment setup")
    parser.add_argument("--seed", type=int, help="override the experiment seed")
    parser.add_argument("--trials", type=int, help="override the number of gain draws per point")
    parser.add_argument("--out", metavar="PATH", help="CSV output path (default: config output.path, else stdout)")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress messages")
    return parser


def _configs(args):
    if args.config is None and args.preset is None:
        raise ConfigError("give --config, --preset, or both")
    if args.config is not None:
        configs = load_config(args.config, preset=args.preset)
    else:
        configs = preset_configs(args.preset)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if changes:
        configs = [dataclasses.replace(c, **changes) for c in configs]
    return configs


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        configs = _configs(args)
    except ConfigError as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out or configs[0].output_path
    try:
        start = time.perf_counter()
        records = run_all(configs)
        if out:
            write_csv(records, out)
        else:
            sys.stdout.write(records_to_csv(records))
    except Exception as exc:  # noqa: BLE001 - every failure maps to the runtime exit code
        print(f"simulate: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not args.quiet:
        where = out if out else "stdout"
        print(f"simulate: {len(records)} records to {where} in {time.perf_counter() - start:.1f} s", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
