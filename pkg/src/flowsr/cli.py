"""Command-line entry point tying the pipeline together.

One executable, `flowsr`, with a subcommand per stage: synthesize clips,
prepare a training manifest, estimate or convert optical flow, train either
objective, run inference, evaluate, render temporal profiles, and run the
built-in verification suite.

Exit codes: 0 success, 1 usage or configuration error, 2 data or IO error,
3 failed validation (the selftest subcommand).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .config import ConfigError, make_config
from .data import (
    FrameSequence,
    bicubic_resize,
    build_manifest,
    load_frame,
    make_synthetic_dataset,
    save_frame,
    scan_sequences,
)
from .evaluate import emit_report, evaluate_clip, temporal_profile
from .flow import estimate_flow, flo_read, flo_write, weight_map
from .models import load_checkpoint
from .selftest import run_selftest
from .sosr import train_sosr
from .tosr import train_tosr

__all__ = ["dispatch", "main"]


def _shift(text: str):
    try:
        dx, dy = (int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected DX,DY integer pair, got {text!r}"
        ) from None
    return dx, dy


# flags shared by the stages that read a RunConfig; dest names match config
# keys so provided values pass straight through as overrides
_CONFIG_FLAGS = {
    "seed": int, "threads": int, "scale": int, "channels": int,
    "patch": int, "top_k": int, "stride": int, "min_variance": float,
    "flow_smoothness": float, "flow_iterations": int,
    "depth": int, "width": int, "batch": int, "iterations": int,
    "lr": float, "lr_decay_epochs": int, "lr_decay_factor": float,
    "checkpoint_every": int, "dataset": str, "pixel_loss": str,
    "sosr_pixel": float, "sosr_feature": float, "sosr_adversarial": float,
    "tosr_sr": float, "tosr_warp_sr": float, "tosr_warp_hr": float,
}


def _add_config_arguments(parser: argparse.ArgumentParser, keys) -> None:
    parser.add_argument("--config", metavar="FILE", help="key = value config file")
    for key in keys:
        parser.add_argument(
            f"--{key.replace('_', '-')}", dest=key, type=_CONFIG_FLAGS[key],
            default=None, help=f"override config key {key}",
        )


def _config_from(args: argparse.Namespace):
    overrides = {
        key: getattr(args, key)
        for key in _CONFIG_FLAGS
        if getattr(args, key, None) is not None
    }
    return make_config(args.config, overrides)


_PREP_KEYS = (
    "seed", "threads", "scale", "channels", "patch", "top_k", "stride",
    "min_variance", "flow_smoothness", "flow_iterations",
)
_TRAIN_KEYS = (
    "seed", "threads", "dataset", "depth", "width", "batch", "iterations",
    "lr", "lr_decay_epochs", "lr_decay_factor", "checkpoint_every",
    "pixel_loss", "sosr_pixel", "sosr_feature", "sosr_adversarial",
    "tosr_sr", "tosr_warp_sr", "tosr_warp_hr",
)
_EVAL_KEYS = ("seed", "threads", "channels", "flow_smoothness", "flow_iterations")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowsr",
        description="Motion-aware video super-resolution toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic video dataset")
    p.add_argument("--kind", required=True,
                   choices=["translating-texture", "moving-foreground"])
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=2, help="number of sequences")
    p.add_argument("--frames", type=int, default=24)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--channels", type=int, default=3, choices=[1, 3])
    p.add_argument("--shift", type=_shift, default=(1, 0), metavar="DX,DY",
                   help="per-frame translation (translating-texture)")
    p.add_argument("--block", type=int, default=24,
                   help="foreground size (moving-foreground)")
    p.add_argument("--step", type=int, default=2,
                   help="foreground speed (moving-foreground)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("prep", help="build a training manifest from clips")
    p.add_argument("--video-root", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--flow-source", choices=["estimate", "provided"],
                   default="estimate")
    _add_config_arguments(p, _PREP_KEYS)
    p.set_defaults(func=_cmd_prep)

    p = sub.add_parser("flow", help="estimate flow or convert a flow file")
    flow_sub = p.add_subparsers(dest="flow_command", required=True)
    q = flow_sub.add_parser("estimate", help="estimate flow between two frames")
    q.add_argument("frame_a", metavar="FRAME_A.png")
    q.add_argument("frame_b", metavar="FRAME_B.png")
    q.add_argument("--out", required=True, metavar="OUT.flo")
    q.add_argument("--smoothness", type=float, default=15.0)
    q.add_argument("--iterations", type=int, default=200)
    q.set_defaults(func=_cmd_flow_estimate)
    q = flow_sub.add_parser("convert", help="render a flow file as a magnitude image")
    q.add_argument("flow_file", metavar="IN.flo")
    q.add_argument("--out", required=True, metavar="OUT.png")
    q.set_defaults(func=_cmd_flow_convert)

    for name, handler, extra_help in (
        ("train-sosr", _cmd_train_sosr, "train with the flow-weighted spatial objective"),
        ("train-tosr", _cmd_train_tosr, "train with the siamese temporal objective"),
    ):
        p = sub.add_parser(name, help=extra_help)
        p.add_argument("--out", required=True, metavar="DIR",
                       help="checkpoint and log directory")
        _add_config_arguments(p, _TRAIN_KEYS)
        p.set_defaults(func=handler)

    p = sub.add_parser("infer", help="run a checkpoint over a clip")
    p.add_argument("--checkpoint", required=True, metavar="CKPT")
    p.add_argument("--input", required=True, metavar="DIR", help="low-resolution clip")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--scale", type=int, default=4)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("eval", help="score super-resolved clips against references")
    p.add_argument("--sr", required=True, metavar="DIR")
    p.add_argument("--hr", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--flow-source", choices=["estimate", "provided"],
                   default="estimate")
    p.add_argument("--profile-row", type=int, default=None)
    _add_config_arguments(p, _EVAL_KEYS)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("profile", help="render a temporal profile image")
    p.add_argument("--input", required=True, metavar="DIR")
    p.add_argument("--out", required=True, metavar="OUT.png")
    p.add_argument("--row", type=int, default=None,
                   help="pixel row to track (default: middle)")
    p.set_defaults(func=_cmd_profile)

    p = sub.add_parser("selftest", help="run the built-in verification suite")
    p.add_argument("--instances", type=int, default=20,
                   help="random draws per gradient check")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_selftest)

    return parser


def _cmd_synth(args) -> int:
    root = make_synthetic_dataset(
        args.kind, args.out, seed=args.seed, count=args.count,
        frames=args.frames, height=args.height, width=args.width,
        channels=args.channels, shift=args.shift, block=args.block,
        step=args.step,
    )
    print(f"wrote {args.count} sequences under {root}")
    return 0


def _cmd_prep(args) -> int:
    cfg = _config_from(args)
    path = build_manifest(args.video_root, args.flow_source, cfg, args.out)
    print(f"wrote {path}")
    return 0


def _cmd_flow_estimate(args) -> int:
    frame_a = load_frame(args.frame_a)
    frame_b = load_frame(args.frame_b)
    field = estimate_flow(frame_a, frame_b, smoothness=args.smoothness,
                          iterations=args.iterations)
    flo_write(field, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_flow_convert(args) -> int:
    field = flo_read(args.flow_file)
    weights = weight_map(field).w
    peak = float(weights.max())
    if peak > 0:
        weights = weights / peak
    save_frame(weights[None], args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_train_sosr(args) -> int:
    cfg = _config_from(args)
    _, rows = train_sosr(cfg.require("dataset"), cfg, out_dir=args.out)
    print(f"trained {len(rows)} iterations, final total {rows[-1]['total']:.6g}")
    return 0


def _cmd_train_tosr(args) -> int:
    cfg = _config_from(args)
    _, rows = train_tosr(cfg.require("dataset"), cfg, out_dir=args.out)
    print(f"trained {len(rows)} iterations, final total {rows[-1]['total']:.6g}")
    return 0


def _cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint)
    seq = FrameSequence(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(seq.frame_count):
        frame = seq.load(i)
        up = bicubic_resize(frame, frame.shape[-2] * args.scale,
                            frame.shape[-1] * args.scale)
        sr = model.forward(Tensor(up[None].astype(np.float32))).data[0]
        save_frame(np.clip(sr, 0.0, 1.0), out / f"{i:06d}.png")
    print(f"wrote {seq.frame_count} frames under {out}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _config_from(args)
    sr_seqs = {seq.name: seq for seq in scan_sequences(args.sr)}
    hr_seqs = {seq.name: seq for seq in scan_sequences(args.hr)}
    if len(sr_seqs) == 1 and len(hr_seqs) == 1:
        pairs = list(zip(sr_seqs.values(), hr_seqs.values()))
    else:
        missing = sorted(set(sr_seqs) - set(hr_seqs))
        if missing:
            raise ValueError(f"no reference clip for {missing[0]}")
        pairs = [(sr_seqs[name], hr_seqs[name]) for name in sorted(sr_seqs)]
    out = Path(args.out)
    reports = [
        evaluate_clip(sr_seq, hr_seq, cfg, flow_source=args.flow_source,
                      profile_row=args.profile_row, profile_dir=out)
        for sr_seq, hr_seq in pairs
    ]
    report_path = out / "report.csv"
    emit_report(reports, report_path)
    print(f"wrote {report_path}")
    return 0


def _cmd_profile(args) -> int:
    seq = FrameSequence(args.input)
    row = seq.height // 2 if args.row is None else args.row
    image = temporal_profile(seq, row)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_frame(image, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_selftest(args) -> int:
    return run_selftest(instances=args.instances, seed=args.seed,
                        report=sys.stdout)


def dispatch(argv=None) -> int:
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
