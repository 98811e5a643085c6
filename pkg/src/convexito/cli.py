"""``convexito <experiment> --config FILE [--seed N] [--out DIR] [--paths N] [--steps N]``.

Exit status: 0 when every verdict passes, 2 on a verdict failure, 3 on a
configuration error or too few paths, 4 on an input/output error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, parse_config
from .exceptions import ConfigError, ConvexitoError, InsufficientDataError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("convexito")


def build_parser():
    p = argparse.ArgumentParser(prog="convexito", description=__doc__.splitlines()[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="TOML config file; omitted means defaults only")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--paths", dest="n_paths", type=int)
    p.add_argument("--steps", dest="n_steps", type=int)
    p.add_argument("--jobs", dest="n_jobs", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        text = ""
        if args.config:
            with open(args.config) as fh:
                text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text, experiment=args.experiment, seed=args.seed,
                           out_dir=args.out_dir, n_paths=args.n_paths, n_steps=args.n_steps,
                           n_jobs=args.n_jobs)
    except ConfigError as exc:
        for v in exc.violations:
            print(f"config error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    from .experiments import run

    try:
        manifest = run(cfg)
    except (ConfigError, InsufficientDataError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ConvexitoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    status = "pass" if manifest.passed else "FAIL"
    print(f"{cfg.experiment}: {status} ({manifest.wall_time:.1f}s) -> {cfg.out_dir}")
    return EXIT_PASS if manifest.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
