"""Command line entry point: ``dampedwave <experiment> [--config FILE] [overrides...]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import CONVERTERS, EXPERIMENTS, ConfigError, read_config_file, resolve
from .errors import NumericalFailure
from .experiments import RUNNERS
from .output import render_csv, render_svg

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dampedwave", description=__doc__.splitlines()[0])
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="flat 'key = value' file; flags override it")
    for key in sorted(CONVERTERS):
        if key == "svg":
            continue
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="VALUE")
    parser.add_argument(
        "--svg", nargs="?", const="", default=None, metavar="PATH",
        help="also write an SVG plot (default path: OUT with .svg suffix)",
    )
    return parser


def resolve_args(argv=None):
    args = build_parser().parse_args(argv)
    raw = read_config_file(args.config) if args.config else {}
    for key in CONVERTERS:
        val = getattr(args, key, None)
        if val is not None and key != "svg":
            raw[key] = val
    cfg = resolve(args.experiment, raw)
    if args.svg is not None:
        if args.svg:
            cfg.values["svg"] = args.svg
        elif cfg["out"] != "-":
            cfg.values["svg"] = str(Path(cfg["out"]).with_suffix(".svg"))
        else:
            raise ConfigError("--svg without a path needs --out")
    return cfg


def main(argv=None) -> int:
    try:
        cfg = resolve_args(argv)
        with np.errstate(over="ignore", invalid="ignore"):
            table = RUNNERS[cfg.experiment](cfg)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"dampedwave: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, np.linalg.LinAlgError) as exc:
        print(f"dampedwave: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"dampedwave: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    text = render_csv(table, cfg.header())
    if cfg["out"] == "-":
        sys.stdout.write(text)
    else:
        Path(cfg["out"]).write_text(text)
    if cfg.get("svg") and table.plot is not None:
        Path(cfg["svg"]).write_text(render_svg(table.plot))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
