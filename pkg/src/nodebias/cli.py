"""``nodebias`` command line.

Exit statuses: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import REGIMES, load_config
from .errors import ConfigError, DataError, NumericError
from .perturb import ALL_NODES, POLARITIES
from . import pipeline

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("nodebias")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_seeds(text: str) -> list[int]:
    """``"0..9"`` (inclusive range) or a comma-separated list."""
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _regimes(value: str | None):
    if value is None:
        return None
    return list(REGIMES) if value == "both" else [value]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nodebias", description="Class and input-node robustness bias analysis "
                     "for small ReLU classifiers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config (JSON)")
        p.add_argument("--out", help="output directory (default: config output_dir)")

    p = sub.add_parser("prepare", help="load, select features, split, truncate, normalise")
    common(p)
    for name, helptext in (("train", "train one network per (regime, seed)"),
                           ("analyze", "noise sweeps, curves, bias scores"),
                           ("run", "prepare, train, analyze and plot")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--seeds", type=parse_seeds, help="e.g. 0..9 or 0,3,5")
        p.add_argument("--regime", choices=[*REGIMES, "both"])
        if name in ("analyze", "run"):
            p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("plot", help="SVG charts from an analysed output directory")
    common(p, config_required=False)

    p = sub.add_parser("export-dtmc", help="PRISM model of one preservation experiment")
    common(p)
    p.add_argument("--regime", choices=REGIMES, default="full")
    p.add_argument("--network-seed", type=int, required=True)
    p.add_argument("--seed-id", required=True, help="test row id of the seed input")
    p.add_argument("--node", default=ALL_NODES, help="node index (0-based) or 'all'")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--polarity", choices=POLARITIES, default="symmetric")
    return parser


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is None:
        raise ConfigError("plot needs --out or --config")
    return Path(cfg.output_dir)


def _dispatch(args) -> int:
    cfg = load_config(args.config) if args.config else None
    out = _out_dir(args, cfg)
    if args.command == "plot":
        if not out.is_dir():
            raise DataError(f"report directory not found: {out}")
        for path in pipeline.cmd_plot(out):
            print(path)
        return EXIT_OK
    with pipeline.locked(out):
        if args.command == "prepare":
            info = pipeline.cmd_prepare(cfg, out)
            print(f"prepared {out}: features {info['selected_features']}, "
                  f"class counts {info['class_counts']}")
        elif args.command == "train":
            failures = pipeline.cmd_train(cfg, out, args.seeds, _regimes(args.regime))
            if failures:
                for f in failures:
                    print(f"diverged: {f}", file=sys.stderr)
                return EXIT_NUMERIC
            print(f"models written under {out / 'models'}")
        elif args.command == "analyze":
            pipeline.cmd_analyze(cfg, out, args.seeds, _regimes(args.regime), args.workers)
            print(f"reports written to {out}")
        elif args.command == "run":
            if args.seeds is not None or args.regime is not None:
                cfg = replace(cfg, **({"seeds": tuple(args.seeds)} if args.seeds else {}),
                              **({"regimes": tuple(_regimes(args.regime))} if args.regime else {}))
            pipeline.run_all(cfg, out, workers=args.workers)
            print(f"reports written to {out}")
        elif args.command == "export-dtmc":
            node = ALL_NODES if args.node == ALL_NODES else int(args.node)
            path = pipeline.cmd_export_dtmc(cfg, out, args.regime, args.network_seed,
                                            args.seed_id, node, args.level, args.polarity)
            print(path)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"nodebias: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"nodebias: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"nodebias: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # a bad --node value and similar argument-level mistakes
        print(f"nodebias: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
