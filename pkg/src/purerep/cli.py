"""``purerep`` command line: train, eval, synth, ablate, encode.

Every failure ends with one JSON line on stderr, e.g.
``{"error": "ConfigError", "message": "..."}``, and a nonzero exit status
(2 for usage mistakes, 1 for everything else).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ABLATIONS, RunConfig
from .errors import PureRepError, UsageError

ABLATION_FLAGS = ("common_trans", "channel_mix", "drop_trend", "drop_periodicity", "origin_data", "linear_head")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds starting at --seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--horizon", action="append", type=int, help="forecast horizon (repeatable)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")
    for flag in ABLATION_FLAGS:
        p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="purerep", description="Contrastive time-series representations with a ridge forecasting head.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="contrastive pre-training")
    _common(p)

    p = sub.add_parser("eval", help="ridge forecasting on frozen representations")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint file or run directory (default: --out)")
    p.add_argument("--report-out", help="where reports go (default: --out)")

    p = sub.add_parser("synth", help="synthetic case study with separability probe")
    _common(p)

    p = sub.add_parser("ablate", help="train and evaluate one ablation variant")
    _common(p)
    p.add_argument("variant", help=", ".join(ABLATIONS))

    p = sub.add_parser("encode", help="dump representations to CSV")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--stride", type=int, default=1)
    return parser


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    if args.seed is not None:
        out["run.seed"] = str(args.seed)
    if args.seeds is not None:
        out["run.seeds"] = str(args.seeds)
    if args.out is not None:
        out["run.out"] = args.out
    if args.epochs is not None:
        out["moco.epochs"] = str(args.epochs)
        if args.command == "synth":
            out["synth.epochs"] = str(args.epochs)
    if args.horizon:
        out["forecast.horizons"] = ",".join(map(str, args.horizon))
    for flag in ABLATION_FLAGS:
        if getattr(args, flag):
            out[f"ablation.{flag}"] = "true"
    return out


def run(argv=None) -> dict:
    args = build_parser().parse_args(argv)
    if not args.command:
        raise UsageError("purerep: a command is required (train, eval, synth, ablate, encode)")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = RunConfig.load(args.config, _overrides(args))
    if args.command == "train":
        dirs = pipeline.run_train(cfg)
        return {"command": "train", "fingerprint": cfg.fingerprint(), "outputs": [str(d) for d in dirs]}
    if args.command == "eval":
        reports = pipeline.run_eval(cfg, args.checkpoint or cfg.run.out, out_dir=args.report_out,
                                    n_seeds=cfg.run.seeds if args.seeds is not None else None)
        return {"command": "eval", "fingerprint": cfg.fingerprint(), "rows": len(reports)}
    if args.command == "synth":
        record = pipeline.run_synth(cfg)
        return {"command": "synth", **record}
    if args.command == "ablate":
        reports = pipeline.run_ablation(cfg, args.variant)
        return {"command": "ablate", "variant": args.variant, "rows": len(reports)}
    path = pipeline.run_encode(cfg, args.checkpoint, args.split, args.stride)
    return {"command": "encode", "fingerprint": cfg.fingerprint(), "output": str(path)}


def _error_record(exc: BaseException) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("row", "column", "step"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    return rec


def main(argv=None) -> int:
    try:
        summary = run(argv)
    except UsageError as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 2
    except (PureRepError, OSError, ValueError) as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print(json.dumps({"error": "Interrupted", "message": "interrupted"}), file=sys.stderr)
        return 130
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
