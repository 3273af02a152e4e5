"""restormer command line: train, restore, bench, gradcheck, count."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import format_count, scaling_bench
from .checkpoint import load_checkpoint
from .config import load_config
from .errors import DimensionError, RestormerError
from .netpbm import ImageBuffer, load_image, save_image
from .network import Model
from .tensor import Tensor
from .verify import VARIANTS, run_suite

MULTIPLE = 8


def restore_array(model: Model, image: np.ndarray) -> np.ndarray:
    """Restore one H x W x C image of any size: reflect-pad to a multiple of 8, crop back."""
    h, w, c = image.shape
    if c != model.cfg.in_channels:
        raise DimensionError(f"image has {c} channels, checkpoint expects {model.cfg.in_channels}")
    ph, pw = -h % MULTIPLE, -w % MULTIPLE
    x = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode="reflect") if ph or pw else image
    out = model(Tensor(x[None].astype(np.float32))).data[0]
    return out[:h, :w]


def _sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_train(args) -> int:
    from .train import train_loop

    run = load_config(args.config)
    tcfg = run.train if args.seed is None else dataclasses.replace(run.train, seed=args.seed)
    result = train_loop(run.model, tcfg, args.out)
    print(f"noisy {result.noisy_psnr:.2f} dB  restored {result.final_psnr:.2f} dB  "
          f"checkpoint {Path(args.out) / 'final.rstm'}")
    return 0


def cmd_restore(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    buf = load_image(args.inp)
    out = restore_array(ckpt.model, buf.values)
    save_image(ImageBuffer(np.clip(out, 0.0, 1.0).astype(np.float32), buf.bit_depth), args.out)
    return 0


def cmd_bench(args) -> int:
    report = scaling_bench(args.channels, args.heads, args.sizes, args.repeats, seed=args.seed or 0)
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    for row in report.rows:
        if row.flagged:
            print(f"warning: {row.kernel} at {row.h}x{row.w} is near timer resolution", file=sys.stderr)
    return 0


def cmd_gradcheck(args) -> int:
    names = [args.variant] if args.variant else None
    failed = False
    for r in run_suite(names, args.seed or 0):
        failed |= not r.ok
        extra = "" if r.params_ok else " (parameter probes disagree)"
        print(f"{r.name:10s} max_rel_error={r.max_rel_error:.3e} worst={r.worst} "
              f"{'ok' if r.ok else 'FAIL'}{extra}")
    return 1 if failed else 0


def cmd_count(args) -> int:
    run = load_config(args.config)
    print(format_count(run.model, args.hw, args.hw))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the RNG seed")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    ap = argparse.ArgumentParser(prog="restormer", parents=[common])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train from a JSON config")
    p.add_argument("--config", required=True, help="JSON run config")
    p.add_argument("--out", required=True, help="directory for metrics.csv and checkpoints")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("restore", parents=[common], help="run a checkpoint on a P5/P6 image")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--in", dest="inp", required=True, help="noisy input image")
    p.add_argument("--out", required=True, help="restored image, same format and bit depth")
    p.set_defaults(fn=cmd_restore)

    p = sub.add_parser("bench", parents=[common], help="attention scaling benchmark")
    p.add_argument("--sizes", type=_sizes, default=[32, 48, 64, 96, 128],
                   help="comma-separated side lengths, increasing")
    p.add_argument("--channels", type=int, default=32, help="channel width C")
    p.add_argument("--heads", type=int, default=4, help="attention heads")
    p.add_argument("--repeats", type=int, default=5, help="timed runs per size (median kept)")
    p.add_argument("--out", help="also write the CSV here")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--variant", choices=[*VARIANTS, "model"], help="run one case instead of all")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("count", parents=[common], help="parameter and MAC counts")
    p.add_argument("--config", required=True, help="JSON config with the model section")
    p.add_argument("--hw", type=int, default=256, help="square input side for the MAC count")
    p.set_defaults(fn=cmd_count)
    return ap


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:  # argparse: 2 on usage errors, 0 on --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")
    try:
        return args.fn(args)
    except (RestormerError, OSError, ValueError) as e:
        print(f"restormer {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
