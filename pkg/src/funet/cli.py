"""Command-line entry point: ``funet <subcommand> ...``.

Exit codes: 0 success, 1 domain error (one ``error: <stage>: <reason>`` line on
stderr), 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import Manifest, compose_directory, parse_key, synth_corpus, synth_sequence
from .evaluation import REPORT_NAME, compare_dirs, predict_sequence, write_overlays
from .flow import HSParams, flow_magnitude, read_flo, write_flo
from .imageio import ensure_dir, frame_name, list_frames, load_frame, load_mask, save_frame, save_mask
from .model import FUNetConfig
from .motionmask import MaskParams
from .pipeline import motion_masks, sequence_flows
from .training import TrainConfig, train


class StageError(Exception):
    def __init__(self, stage, reason):
        super().__init__(f"{stage}: {reason}")


def _size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h <= 0 or w <= 0 or h % 4 or w % 4:
        raise argparse.ArgumentTypeError(f"size {text} must be positive and divisible by 4")
    return h, w


def _key(text: str):
    try:
        return parse_key(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_flow_flags(p):
    p.add_argument("--levels", type=int, default=HSParams.levels, help="pyramid levels")
    p.add_argument("--lambda", dest="smoothness", type=float, default=HSParams.smoothness,
                   help="smoothness weight (8-bit intensity units)")
    p.add_argument("--iters", type=int, default=HSParams.iterations, help="Jacobi iterations per warp")
    p.add_argument("--warps", type=int, default=HSParams.warps, help="warps per pyramid level")


def _hs(args) -> HSParams:
    return HSParams(args.smoothness, args.iters, args.levels, args.warps)


def _load_dir(directory):
    paths = list_frames(directory)
    if not paths:
        raise ValueError(f"no PNG/PGM frames in {directory}")
    return paths, [load_frame(p) for p in paths]


def cmd_synth(args):
    try:
        if args.sequences == 1:
            manifest = synth_sequence(args.out, args.frames, args.size, args.seed)
        else:
            fractions = (0.6, 0.2, 0.2) if args.sequences >= 3 else None
            manifest = synth_corpus(args.out, args.sequences, args.frames, args.size, args.seed, fractions)
    except OSError as exc:
        raise StageError("synth", exc) from None
    print(manifest.root / "manifest.json")


def cmd_compose(args):
    try:
        manifest = compose_directory(args.fg, args.bg, args.out, args.key, args.tolerance)
    except (OSError, ValueError) as exc:
        raise StageError("compose", exc) from None
    print(manifest.root / "manifest.json")


def cmd_flow(args):
    try:
        _, frames = _load_dir(args.input)
        out = ensure_dir(args.out)
        flows = sequence_flows(frames, _hs(args))
    except (OSError, ValueError) as exc:
        raise StageError("flow", exc) from None
    mags = [flow_magnitude(f) for f in flows]
    peak = max(float(m.max()) for m in mags) or 1.0
    for k, (f, m) in enumerate(zip(flows, mags), start=1):
        write_flo(f, out / frame_name(k, ".flo"))
        save_frame((m / peak)[:, :, None], out / frame_name(k, ".pgm"))
    print(f"flows={len(flows)} max_magnitude={peak:.6g}")


def cmd_mask(args):
    try:
        paths = sorted(Path(args.flows).glob("*.flo"))
        if not paths:
            raise ValueError(f"no .flo files in {args.flows}")
        flows = [read_flo(p) for p in paths]
        masks = motion_masks(flows, len(flows) + 1, MaskParams(args.alpha, args.normalize))
        out = ensure_dir(args.out)
    except (OSError, ValueError) as exc:
        raise StageError("mask", exc) from None
    for k, m in enumerate(masks):
        save_mask(m, out / frame_name(k, ".pgm"))
    print(f"masks={len(masks)}")


def cmd_train(args):
    try:
        manifest = Manifest.load(args.data)
        config = TrainConfig(
            learning_rate=args.lr,
            weight_decay=args.weight_decay,
            momentum=args.momentum,
            epochs=args.epochs,
            batch_size=args.batch_size,
            seed=args.seed,
            downscale=args.downscale,
        )
        out = Path(args.out)
        ensure_dir(out.parent)
        log = (lambda rec: print(json.dumps(rec), file=sys.stderr)) if args.verbose else None
        result = train(manifest, out, FUNetConfig(), config, _hs(args), MaskParams(args.alpha, args.normalize), log=log)
    except (OSError, ValueError) as exc:
        raise StageError("train", exc) from None
    print(f"checkpoint={out} best_epoch={result.best_epoch}")


def cmd_predict(args):
    try:
        paths, frames = _load_dir(args.input)
        if len(frames) < 2:
            raise ValueError("need at least 2 frames")
        frames = [f[:, :, :3] for f in frames]
        cache = Path(args.flows) if args.flows else Path(args.input).resolve().parent / "flows"
        masks = predict_sequence(args.model, frames, args.alpha, args.threshold, cache)
        out = ensure_dir(args.out)
    except (OSError, ValueError) as exc:
        raise StageError("predict", exc) from None
    for k, m in enumerate(masks):
        save_mask(m, out / frame_name(k))
    print(f"predictions={len(masks)}")


def cmd_eval(args):
    try:
        report = compare_dirs(args.pred, args.gt, args.threshold)
        report.save(args.report)
        if args.overlay:
            if not args.frames:
                raise ValueError("--overlay needs --frames")
            _, frames = _load_dir(args.frames)
            write_overlays(frames, [load_mask(p) for p in list_frames(args.pred)], args.overlay)
    except (OSError, ValueError) as exc:
        raise StageError("eval", exc) from None
    print(f"mean_dice={report.mean_dice:.6f}")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="funet", description=__doc__.splitlines()[0], formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic labelled sequences", formatter_class=fmt)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=20, help="frames per sequence")
    p.add_argument("--size", type=_size, default=(64, 64), help="HxW, both divisible by 4")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sequences", type=int, default=1, help="sequences; 3 or more are split 60/20/20")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("compose", help="chroma-key green-screen frames onto backgrounds", formatter_class=fmt)
    p.add_argument("--fg", required=True, help="green-screen frame directory")
    p.add_argument("--bg", required=True, help="background image directory (cycled)")
    p.add_argument("--out", required=True)
    p.add_argument("--key", type=_key, default=(0, 255, 0), help="key colour RRGGBB")
    p.add_argument("--tolerance", type=float, default=0.25, help="RGB distance in [0,1] units")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("flow", help="optical flow between consecutive frames", formatter_class=fmt)
    p.add_argument("--in", dest="input", required=True, help="frame directory")
    p.add_argument("--out", required=True, help="directory for .flo files and magnitude PGMs")
    _add_flow_flags(p)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("mask", help="threshold flow magnitudes into motion masks", formatter_class=fmt)
    p.add_argument("--flows", required=True, help="directory of .flo files")
    p.add_argument("--alpha", type=float, default=MaskParams.alpha, help="magnitude threshold, px/frame")
    p.add_argument("--normalize", action="store_true", help="divide magnitudes by the sequence maximum first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("train", help="train the segmentation network", formatter_class=fmt)
    p.add_argument("--data", required=True, help="manifest.json")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--weight-decay", type=float, default=TrainConfig.weight_decay)
    p.add_argument("--momentum", type=float, default=TrainConfig.momentum)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--downscale", type=int, default=TrainConfig.downscale, help="integer input down-scaling factor")
    p.add_argument("--seed", type=int, default=TrainConfig.seed)
    p.add_argument("--alpha", type=float, default=MaskParams.alpha, help="motion-mask threshold, px/frame")
    p.add_argument("--normalize", action="store_true", help="normalise magnitudes per sequence")
    _add_flow_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("-v", "--verbose", action="store_true", help="log each epoch to stderr")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict foreground masks for a frame directory", formatter_class=fmt)
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--in", dest="input", required=True, help="frame directory")
    p.add_argument("--out", required=True, help="mask output directory")
    p.add_argument("--alpha", type=float, default=None, help="override the checkpoint's motion threshold")
    p.add_argument("--threshold", type=float, default=0.5, help="probability threshold")
    p.add_argument("--flows", default=None, help="flow cache directory (default: flows/ beside --in)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="Dice of predicted masks against ground truth", formatter_class=fmt)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", default=REPORT_NAME, help="JSON report path")
    p.add_argument("--threshold", type=float, default=0.5, help="threshold recorded in the report")
    p.add_argument("--frames", default=None, help="input frames, for overlays")
    p.add_argument("--overlay", default=None, help="write red overlay PNGs here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
