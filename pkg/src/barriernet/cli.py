"""Command line entry point: ``barriernet <subcommand> [--config PATH] ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, PipelineConfig, load_config, validate
from .labeling import InsufficientFutureError
from .market_data import ParseError, ValidationError

logger = logging.getLogger("barriernet")

SUBCOMMANDS = ("ingest", "label", "stats", "train", "predict", "sweep", "select", "backtest", "synth", "report")


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "y"):
        return True
    if lowered in ("0", "false", "no", "n"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML pipeline config")
    common.add_argument("--seed", type=int, help="global seed (training, random baselines, synth)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--horizon", type=int, help="restrict to one labeling horizon D")
    common.add_argument("--pct", type=float, help="restrict to one barrier fraction, e.g. 0.1")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="barriernet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="validate data files and apply the price filter")
    sub.add_parser("label", parents=[common], help="build labeled datasets per label spec and split")
    sub.add_parser("stats", parents=[common], help="label proportion table")
    p = sub.add_parser("train", parents=[common], help="train one model per label spec")
    p.add_argument("--epochs", type=int)
    sub.add_parser("predict", parents=[common], help="validation and test predictions")
    sub.add_parser("sweep", parents=[common], help="threshold sweep on validation predictions")
    sub.add_parser("select", parents=[common], help="pick the best threshold per label spec")
    p = sub.add_parser("backtest", parents=[common], help="simulate selected configs and random baselines")
    p.add_argument("--threshold", type=float, help="backtest at this threshold instead of the selection")
    p.add_argument("--sidecut", type=_bool, help="true or false; default runs both")
    p = sub.add_parser("synth", parents=[common], help="write a seeded random-walk universe")
    p.add_argument("--tickers", type=int, default=10)
    p.add_argument("--days", type=int, default=1300)
    p.add_argument("--start", default="2015-01-01")
    p.add_argument("--drift", type=float, default=0.0, help="daily log drift")
    p.add_argument("--vol", type=float, default=0.03, help="daily log volatility")
    p.add_argument("--data-dir", type=Path, help="defaults to the config's data_dir")
    sub.add_parser("report", parents=[common], help="summary tables and figures")
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.output_dir = str(args.out)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    if args.horizon is not None:
        cfg.horizons = [args.horizon]
    if args.pct is not None:
        cfg.barriers = [args.pct]
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    return validate(cfg)


def run(args) -> None:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "synth":
        data_dir = args.data_dir or cfg.resolved_data_dir()
        seed = args.seed if args.seed is not None else cfg.seed
        paths = pipeline.run_synth(data_dir, args.tickers, args.days, seed, args.start, args.drift, args.vol)
        print(f"wrote {len(paths)} tickers to {data_dir}")
    elif cmd == "ingest":
        print(pipeline.run_ingest(cfg))
    elif cmd == "label":
        for p in pipeline.run_label(cfg):
            print(p)
    elif cmd == "stats":
        print(pipeline.run_stats(cfg))
    elif cmd == "train":
        for p in pipeline.run_train(cfg):
            print(p)
    elif cmd == "predict":
        for p in pipeline.run_predict(cfg):
            print(p)
    elif cmd == "sweep":
        print(pipeline.run_sweep(cfg))
    elif cmd == "select":
        print(pipeline.run_select(cfg))
    elif cmd == "backtest":
        print(pipeline.run_backtest(cfg, threshold=args.threshold, sidecut=args.sidecut))
    elif cmd == "report":
        for p in pipeline.run_report(cfg):
            print(p)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except pipeline.MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (pipeline.DataFileError, ParseError, ValidationError, InsufficientFutureError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
