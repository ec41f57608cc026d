"""``chemflow <mode> --config <path> [--output <dir>] [--override key=value ...]``"""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import MODES, load_config
from .errors import ConfigError
from .runner import EXIT_CONFIG, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chemflow", description=__doc__.strip("`"))
    p.add_argument("mode", choices=MODES)
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--output", help="output directory (overrides output.directory)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a dotted config key; the value is parsed as YAML (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"chemflow {__version__}")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.override, mode=args.mode, output=args.output)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    result = run(cfg)
    line = f"{cfg.mode}: {result.status} -> {result.output_dir}"
    if result.message:
        line += f" ({result.message})"
    print(line, file=sys.stderr if result.exit_code else sys.stdout)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
