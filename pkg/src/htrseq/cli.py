"""Command line entry point: ``htrseq {synth,train,pretrain-ctc,eval,recognize}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint
from .config import ExperimentConfig, load_config
from .data.io import load_dataset, write_dataset
from .data.synth import synth_corpus
from .training import TrainingDiverged, evaluate, recognize, train

logger = logging.getLogger("htrseq")


def _add_training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI experiment config (defaults: the full-size setup)")
    p.add_argument("--train-data", help="dataset directory holding lines.tsv")
    p.add_argument("--val-data", help="validation dataset directory")
    p.add_argument("--out", help="output directory for checkpoints and logs")
    p.add_argument("--pretrained", help="checkpoint whose encoder weights are loaded")
    p.add_argument("--epochs", type=int, help="number of epochs (default 200)")
    p.add_argument("--epoch-size", type=int, help="samples per epoch (default 8192)")
    p.add_argument("--batch-size", type=int, help="batch size (default 16)")
    p.add_argument("--lr", type=float, help="base learning rate (default 0.001)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    for attr, key in (("train_data", "train_data"), ("val_data", "val_data"), ("out", "output"),
                      ("pretrained", "pretrained"), ("seed", "seed")):
        if getattr(args, attr, None) is not None:
            setattr(cfg, key, getattr(args, attr))
    for attr in ("epochs", "epoch_size", "batch_size", "lr"):
        if getattr(args, attr, None) is not None:
            setattr(cfg.training, attr, getattr(args, attr))
    return cfg


def _run_training(cfg: ExperimentConfig) -> int:
    if not cfg.train_data:
        raise SystemExit("no training data: set [experiment] train_data or pass --train-data")
    if not cfg.output:
        raise SystemExit("no output directory: set [experiment] output or pass --out")
    train_samples = load_dataset(cfg.train_data)
    val_samples = load_dataset(cfg.val_data) if cfg.val_data else None
    result = train(cfg, train_samples, val_samples, cfg.output)
    last = result.epochs[-1] if result.epochs else None
    if last is not None:
        print(f"epoch {last.epoch}\tloss {last.loss:.4f}\tcheckpoint {Path(cfg.output) / 'checkpoint.npz'}")
    return 0


def cmd_synth(args) -> int:
    samples = synth_corpus(args.lines, args.charset, args.seed, min_len=args.min_len, max_len=args.max_len)
    index = write_dataset(args.out, samples)
    print(f"wrote {len(samples)} lines to {index}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.regime:
        cfg.regime = args.regime
    if args.lam is not None:
        cfg.loss.lam = args.lam
    return _run_training(_apply_overrides(cfg, args))


def cmd_pretrain_ctc(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg.regime = "ctc"
    return _run_training(_apply_overrides(cfg, args))


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    dec, enc = evaluate(ckpt.model, load_dataset(args.data), beam_width=args.beam_width)
    print(dec.summary("decoder CER"))
    if enc is not None:
        print(enc.summary("encoder CER"))
    if args.report:
        dec.write_tsv(args.report)
    return 0


def cmd_recognize(args) -> int:
    if not args.images:
        return 0
    model = load_checkpoint(args.checkpoint).model
    dump = args.dump_dir if args.dump_attention else None
    failed = 0
    for rec in recognize(model, args.images, args.beam_width, dump):
        if rec.error is not None:
            failed += 1
            print(f"{rec.path}: {rec.error}", file=sys.stderr)
        else:
            print(rec.text if args.text_only else f"{rec.path}\t{rec.text}")
    return 1 if failed and failed == len(args.images) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="htrseq", description="Attention-based text line recognizer")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic line dataset")
    p.add_argument("out", help="output directory")
    p.add_argument("--lines", type=int, default=64)
    p.add_argument("--charset", default="abcdehilmnorstu ")
    p.add_argument("--min-len", type=int, default=3)
    p.add_argument("--max-len", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a recognizer")
    _add_training_args(p)
    p.add_argument("--regime", choices=("hybrid", "fixed-encoder", "ce-scratch", "ce-pretrained"))
    p.add_argument("--lambda", dest="lam", type=float, help="CTC weight of the hybrid loss (default 0.5)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pretrain-ctc", help="train the encoder alone with the CTC loss")
    _add_training_args(p)
    p.set_defaults(func=cmd_pretrain_ctc)

    p = sub.add_parser("eval", help="character error rate of a checkpoint on a dataset")
    p.add_argument("checkpoint")
    p.add_argument("data", help="dataset directory holding lines.tsv")
    p.add_argument("--beam-width", type=int, default=16, help="1 = greedy (default 16)")
    p.add_argument("--report", help="write per-line TSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recognize", help="transcribe line images")
    p.add_argument("checkpoint")
    p.add_argument("images", nargs="*")
    p.add_argument("--beam-width", type=int, default=16, help="1 = greedy (default 16)")
    p.add_argument("--dump-attention", action="store_true", help="write <stem>.attn.csv and .attn.pgm")
    p.add_argument("--dump-dir", default=".", help="directory for attention dumps (default .)")
    p.add_argument("--text-only", action="store_true", help="print transcripts without paths")
    p.set_defaults(func=cmd_recognize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, TrainingDiverged) as exc:
        print(f"htrseq: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
