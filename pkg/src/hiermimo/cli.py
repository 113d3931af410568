"""Command-line entry point: `simulate --config <file> --out results.csv ...`.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 internal solver
inconsistency.
"""

import argparse
import os
import sys

from .errors import ConfigError, InconsistencyError
from .harness import (
    ExperimentSpec,
    emit_outputs,
    parse_config_file,
    parse_schemes,
    parse_snr_grid,
    run_sweep,
)


def _check_writable(path):
    """Fail fast on unwritable output locations, before hours of trials."""
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise OSError(f"output directory does not exist: {parent}")
    if not os.access(parent, os.W_OK):
        raise OSError(f"output directory is not writable: {parent}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Monte-Carlo sum-rate sweep of the precoding schemes "
        "over a per-TX SNR grid.",
    )
    p.add_argument("--config", required=True, help="INI config file")
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--snr", help="SNR grid in dB: start:stop:step or comma list")
    p.add_argument("--trials", type=int, help="number of Monte-Carlo trials")
    p.add_argument(
        "--schemes",
        help="comma list of perfect, naive, hier-bisect, hier-clip",
    )
    p.add_argument("--seed", type=int, help="base seed of the trial streams")
    p.add_argument("--dump-trials", help="optional per-trial CSV dump path")
    p.add_argument("--plot", help="optional path for a matplotlib plot script")
    p.add_argument(
        "--quiet", action="store_true", help="suppress the progress line"
    )
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        network, quality, defaults, opts = parse_config_file(args.config)
        snr = parse_snr_grid(args.snr) if args.snr else defaults["snr_grid_db"]
        trials = args.trials if args.trials is not None else defaults["trials"]
        schemes = parse_schemes(args.schemes) if args.schemes else defaults["schemes"]
        seed = args.seed if args.seed is not None else defaults["seed"]
        missing = [
            name
            for name, val in (
                ("snr", snr), ("trials", trials), ("schemes", schemes), ("seed", seed)
            )
            if val is None
        ]
        if missing:
            raise ConfigError(
                "missing experiment settings (flag or [experiment] key): "
                + ", ".join(missing)
            )
        spec = ExperimentSpec(
            network=network,
            quality=quality,
            snr_grid_db=tuple(snr),
            trials=trials,
            schemes=tuple(schemes),
            base_seed=seed,
            opts=opts,
        )
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2

    try:
        for path in (args.out, args.dump_trials, args.plot):
            if path is not None:
                _check_writable(path)
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2

    progress = None
    if not args.quiet:
        def progress(done, total):
            print(f"\rtrial {done}/{total}", end="", file=sys.stderr, flush=True)

    try:
        table, records = run_sweep(
            spec, collect_trials=args.dump_trials is not None, progress=progress
        )
        if not args.quiet:
            print(file=sys.stderr)
        emit_outputs(
            table,
            args.out,
            plot_path=args.plot,
            records=records,
            dump_path=args.dump_trials,
        )
    except InconsistencyError as e:
        print(f"internal inconsistency: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
