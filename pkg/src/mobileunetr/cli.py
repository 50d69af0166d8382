"""Command line entry point: analyze, gen-data, train, eval, infer, gradcheck.

Exit status is 0 on success, 1 on runtime failure and 2 on usage or
configuration errors. ``MUTR_THREADS`` caps BLAS threads.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import autodiff
from .analyzer import analyze, calibrate, render_report
from .checkpoint import load_checkpoint
from .config import load_config
from .data import generate_dataset, load_image, read_dataset, save_mask
from .errors import ConfigError, MobileUNETRError
from .metrics import binarize
from .model import build_model
from .optim import ScheduleSpec
from .trainer import evaluate, train
from .verify import check_blocks, check_model

logger = logging.getLogger("mobileunetr")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write_or_print(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_analyze(args) -> int:
    model = build_model(args.config, seed=0)
    if args.resolution is None:
        report, _ = calibrate(model)
    else:
        report = analyze(model, args.resolution)
    _write_or_print(render_report(report, args.format), args.out)
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.count < 1 or args.size < 8:
        raise UsageError("--count must be >= 1 and --size >= 8")
    stride = load_config(args.config).input_multiple
    out = generate_dataset(args.out, args.count, args.size, args.seed, args.hair, model_stride=stride)
    print(f"wrote {args.count} samples of {args.size}x{args.size} to {out}")
    return EXIT_OK


def _schedule(args) -> ScheduleSpec:
    try:
        return ScheduleSpec(args.lr, args.warmup, args.total_epochs, args.min_lr)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    spec = _schedule(args)
    dataset = read_dataset(args.data)
    state = None
    if args.checkpoint:
        model, state = load_checkpoint(args.checkpoint, config=args.config)
    else:
        model = build_model(args.config or "ref", args.seed)
    result = train(model, dataset, spec, batch_size=args.batch_size, seed=args.seed, out_dir=args.out,
                   epochs=args.epochs, val_fraction=args.val_fraction, checkpoint_every=args.checkpoint_every,
                   weight_decay=args.weight_decay, state=state)
    last = result.history[-1]
    print(f"trained {len(result.history)} epochs, final loss {last['train_loss']:.4f}; "
          f"checkpoint {result.final_checkpoint}, log {result.log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint, config=args.config, allow_shape_compatible=True)
    report = evaluate(model, read_dataset(args.data), args.batch_size, args.threshold)
    if args.format == "json":
        _write_or_print(json.dumps(report.as_dict(), indent=2) + "\n", args.out)
    else:
        lines = [f"{k:<5} {100 * getattr(report, k):6.2f}" for k in ("SE", "SP", "ACC", "IoU", "Dice")]
        counts = f"TP {report.tp}  FP {report.fp}  TN {report.tn}  FN {report.fn}"
        _write_or_print("\n".join(lines + [counts]) + "\n", args.out)
    return EXIT_OK


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.checkpoint, config=args.config, allow_shape_compatible=True)
    src = Path(args.input)
    files = sorted(src.glob("*.ppm")) if src.is_dir() else [src]
    if not files:
        raise UsageError(f"no .ppm images found in {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in files:
        image = load_image(path).data
        probs = model.predict_proba(image[None])
        save_mask(binarize(probs[0], args.threshold), out / f"{path.stem}.pgm")
    print(f"wrote {len(files)} mask(s) to {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    with contextlib.ExitStack() as stack:
        for fault in args.inject_fault or []:
            stack.enter_context(autodiff.inject_fault(fault))
        rows = check_blocks(args.seed) if args.scope == "block" else [check_model(args.seed)]
    print(f"{'check':<18} {'max_rel_err':>12} {'tolerance':>10}  result")
    for r in rows:
        print(f"{r.name:<18} {r.max_rel_err:12.3e} {r.tolerance:10.0e}  {'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mobileunetr", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("analyze", help="per-layer parameter and MAC report", formatter_class=fmt)
    p.add_argument("--config", default="ref", help="built-in name (ref, tiny) or JSON path")
    p.add_argument("--resolution", type=int, default=None,
                   help="input size; omitted: calibrate over 256 and 512")
    p.add_argument("--format", choices=("table", "json", "csv"), default="table", help="output format")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("gen-data", help="write a synthetic lesion dataset", formatter_class=fmt)
    p.add_argument("--count", type=int, default=16, help="number of samples")
    p.add_argument("--size", type=int, default=64, help="square image side in pixels")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, help="dataset directory to create")
    p.add_argument("--hair", action="store_true", help="draw hair-like occluding arcs")
    p.add_argument("--config", default="ref", help="model whose stride the size is checked against")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset directory", formatter_class=fmt)
    p.add_argument("--config", default=None, help="built-in name or JSON path (default: ref, or the checkpoint's)")
    p.add_argument("--data", required=True, help="dataset directory written by gen-data")
    p.add_argument("--out", required=True, help="directory for the log and checkpoints")
    p.add_argument("--checkpoint", default=None, help="resume weights and optimizer state")
    p.add_argument("--seed", type=int, default=0, help="initialization, shuffling and flips")
    p.add_argument("--epochs", type=int, default=None, help="stop after this many epochs (default: all)")
    p.add_argument("--batch-size", type=int, default=8, help="samples per step")
    p.add_argument("--lr", type=float, default=4e-4, help="peak learning rate")
    p.add_argument("--warmup", type=int, default=40, help="linear warmup epochs")
    p.add_argument("--total-epochs", type=int, default=440, help="warmup plus cosine epochs")
    p.add_argument("--min-lr", type=float, default=0.0, help="cosine floor")
    p.add_argument("--weight-decay", type=float, default=0.01, help="decoupled, conv and linear weights only")
    p.add_argument("--val-fraction", type=float, default=0.2, help="trailing share of samples held out")
    p.add_argument("--checkpoint-every", type=int, default=50, help="epochs between periodic checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="SE, SP, ACC, IoU and Dice on a dataset", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="trained .mutr file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config", default=None, help="require the checkpoint to be shape compatible")
    p.add_argument("--batch-size", type=int, default=8, help="samples per forward pass")
    p.add_argument("--threshold", type=float, default=0.5, help="probability cut for the lesion class")
    p.add_argument("--format", choices=("text", "json"), default="text", help="output format")
    p.add_argument("--out", default=None, help="write the report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="write predicted P5 masks", formatter_class=fmt)
    p.add_argument("--checkpoint", required=True, help="trained .mutr file")
    p.add_argument("--input", required=True, help="a .ppm image or a directory of them")
    p.add_argument("--out", required=True, help="directory for the .pgm masks")
    p.add_argument("--config", default=None, help="require the checkpoint to be shape compatible")
    p.add_argument("--threshold", type=float, default=0.5, help="probability cut for the lesion class")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks", formatter_class=fmt)
    p.add_argument("--scope", choices=("block", "model"), default="block",
                   help="each block type, or the whole tiny model")
    p.add_argument("--seed", type=int, default=0, help="initialization and input seed")
    p.add_argument("--inject-fault", action="append", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _thread_limit() -> Optional[int]:
    raw = os.environ.get("MUTR_THREADS")
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise UsageError(f"MUTR_THREADS must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise UsageError(f"MUTR_THREADS must be a positive integer, got {raw!r}")
    return value


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_thread_limit()):
            return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"mobileunetr {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MobileUNETRError, OSError, ValueError) as exc:
        print(f"mobileunetr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
