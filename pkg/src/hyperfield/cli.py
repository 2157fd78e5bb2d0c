"""Operator surface: one sub-command per stage plus ``run-all``.

Exit codes are stable: 0 success, 2 config error, 3 dependency error
(a required stage has not run), 4 data error, 5 numeric divergence,
1 unexpected crash. The ``HYPERFIELD_LOG`` environment variable sets
the log level (DEBUG, INFO, WARNING, ERROR); the default is WARNING.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import load_config
from .errors import ConfigError, HyperfieldError, exit_code_for
from .pipeline import STAGE_ORDER, run_all, run_stage

_COMMAND_HELP = {
    "synth": "generate a synthetic scene, truth files, and reference cube",
    "calibrate": "radiance to reflectance via the panel, then band masking",
    "segment": "index plane, threshold, cleanup, plot bounding boxes",
    "gridmap": "snap boxes to the field grid and assign plot ids",
    "endmembers": "extract (or load) and label the endmember spectra",
    "unmix": "per-pixel constrained abundances and the foreground mask",
    "dataset": "window each plot, allocate yields, extract features",
    "train": "split records and fit the yield regressor",
    "evaluate": "held-out metrics at sub-plot, plot, and field level",
    "report": "metrics, scatter data, colormaps, and the text summary",
    "run-all": "every pipeline stage in order (synth not included)",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperfield",
        description="plot-scale yield phenotyping pipeline",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N",
                        help="override the synth, split, and train seeds")
    common.add_argument("--threads", type=int, metavar="N",
                        help="worker cap for the unmixing stage")
    common.add_argument("--stage-force", action="store_true",
                        help="rerun even when the stage manifest matches")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name in ("synth", *STAGE_ORDER, "run-all"):
        sub.add_parser(name, parents=[common], help=_COMMAND_HELP[name])
    return parser


def _setup_logging() -> None:
    name = os.environ.get("HYPERFIELD_LOG", "WARNING").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.out is not None:
            config.set("output", "dir", args.out)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            for section in ("synth", "split", "train"):
                config.set(section, "seed", str(args.seed))
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            config.set("unmix", "threads", str(args.threads))

        if args.command == "run-all":
            run_all(config, force=args.stage_force)
        else:
            run_stage(args.command, config, force=args.stage_force)
    except HyperfieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
