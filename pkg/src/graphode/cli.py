"""Command-line entry point.

Subcommands: ``generate``, ``train``, ``rollout``, ``eval``,
``compare-attention``.  All settings come from a key=value config file;
``--set key=value`` (repeatable) overrides individual entries, ``--seed``
and ``--out`` override ``seed`` and ``out_dir``.

Exit codes: 0 success, 1 config error, 2 numeric failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .config import MODES, ExperimentConfig, load_config_file
from .errors import ConfigError, DataIOError, NumericError, ShapeError
from .experiments import run_experiment

__all__ = ["build_parser", "main", "main_entry"]


class _Parser(argparse.ArgumentParser):
    # bad usage is a config error (exit 1), not argparse's default exit 2
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graphode", description=__doc__)
    subparsers = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sp = subparsers.add_parser(mode, description=f"run the {mode} mode")
        sp.add_argument("--config", required=True, help="key=value configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration entry (repeatable)")
        sp.add_argument("--seed", type=int, default=None, help="override the seed")
        sp.add_argument("--out", default=None, help="override the output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        overrides: dict[str, str] = {}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep or not key.strip():
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            overrides[key.strip()] = value.strip()
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.out is not None:
            overrides["out_dir"] = args.out
        file_pairs = load_config_file(args.config)
        cfg = ExperimentConfig.from_sources(args.mode, file_pairs, overrides)
        artifacts = run_experiment(cfg)
        for name in sorted(artifacts):
            print(f"{name}: {artifacts[name]}")
        return 0
    except (ConfigError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (DataIOError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
