"""Command line front end.

Subcommands cover the whole workflow: pretrain a predictor on a corpus,
fine-tune it to a clip, export or apply lattices, benchmark application
speed, and report quality metrics. Exit codes: 0 on success, 2 for usage
or input problems, 3 when a numeric failure (non-finite loss or gradient)
stops an optimization.

Defaults come from one place: TrainConfig and LossWeights. The --workers
option falls back to the NLUT_WORKERS environment variable when absent.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import NlutError, NumericError
from .losses import LossWeights, monotonicity_penalty, smoothness
from .lut3d import apply_image, make_identity, read_cube_file, \
    write_cube_file
from .network import lut_from_weights, predict_weights
from .trainer import TrainConfig, finetune, load_checkpoint, pretrain, \
    save_checkpoint
from .video import (BENCH_RESOLUTIONS, bench, consistency_check, load_frames,
                    load_image, save_frames, save_image, stylize_video)

_DEFAULTS = TrainConfig()
_IMAGE_SUFFIXES = (".png", ".ppm", ".pnm", ".jpg", ".jpeg", ".bmp")


def _parse_resize(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected WIDTHxHEIGHT, got {text!r}") from None


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def resolve_workers(value: int | None) -> int:
    """Explicit flag first, then NLUT_WORKERS, then single-threaded."""
    if value is not None:
        return value
    env = os.environ.get("NLUT_WORKERS", "").strip()
    if env:
        try:
            v = int(env)
        except ValueError:
            raise ValueError(f"NLUT_WORKERS must be an integer, got {env!r}")
        if v < 1:
            raise ValueError(f"NLUT_WORKERS must be at least 1, got {v}")
        return v
    return 1


def _add_profile(p: argparse.ArgumentParser, default=_DEFAULTS.profile) -> None:
    p.add_argument("--profile", "--features", dest="profile",
                   choices=["desk", "paper"], default=default,
                   help="feature extractor width preset (--features is an "
                        "alias)")


def _add_workers(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="worker threads for lattice application "
                        "(default: NLUT_WORKERS or 1)")


def _add_lambdas(p: argparse.ArgumentParser) -> None:
    lw = LossWeights()
    p.add_argument("--lambda-style", type=float, default=None,
                   help=f"style term weight (default {lw.style})")
    p.add_argument("--lambda-content", type=float, default=None,
                   help=f"content term weight (default {lw.content})")
    p.add_argument("--lambda-smooth", type=float, default=None,
                   help=f"smoothness weight (default {lw.smooth})")
    p.add_argument("--lambda-mono", type=float, default=None,
                   help=f"monotonicity weight (default {lw.mono})")


def _weights_from_args(args, base: LossWeights) -> LossWeights:
    over = {}
    for field_name in ("style", "content", "smooth", "mono"):
        v = getattr(args, f"lambda_{field_name}")
        if v is not None:
            over[field_name] = v
    return replace(base, **over) if over else base


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlut",
        description="Learn and apply photorealistic color-grading lattices.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain",
                       help="train a weight predictor on an image corpus")
    p.add_argument("--corpus", required=True, help="directory of images")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--iterations", type=int, default=_DEFAULTS.iterations)
    p.add_argument("--batch", type=_positive_int, default=_DEFAULTS.batch)
    p.add_argument("--seed", type=int, default=_DEFAULTS.seed)
    p.add_argument("--feature-seed", type=int,
                   default=_DEFAULTS.feature_seed,
                   help="seed for the frozen feature extractor kernels")
    p.add_argument("--dim", type=int, default=_DEFAULTS.dim,
                   help="lattice size per axis")
    p.add_argument("--basis", type=_positive_int, default=_DEFAULTS.n_basis,
                   help="number of basis tables")
    p.add_argument("--lr", type=float, default=_DEFAULTS.lr)
    p.add_argument("--resize", type=_parse_resize, default=_DEFAULTS.resize,
                   metavar="WxH", help="training resolution")
    p.add_argument("--loss-log", default=None, metavar="CSV",
                   help="write per-iteration losses to this CSV file")
    p.add_argument("--freeze-basis", action="store_true",
                   help="do not update the basis tables")
    p.add_argument("--freeze-matrices", action="store_true",
                   help="do not update the transform matrices")
    p.add_argument("--quiet", action="store_true")
    _add_profile(p)
    _add_workers(p)
    _add_lambdas(p)

    p = sub.add_parser("finetune",
                       help="specialize a checkpoint to keyframes and style")
    p.add_argument("--ckpt", required=True, help="pretrained checkpoint")
    p.add_argument("--content", required=True, nargs="+",
                   help="one or more keyframe image paths")
    p.add_argument("--style", required=True, help="style image path")
    p.add_argument("--out-cube", default=None, help=".cube file to write")
    p.add_argument("--out-ckpt", default=None,
                   help="fine-tuned checkpoint to write")
    p.add_argument("--iterations", type=int, default=None,
                   help=f"default {_DEFAULTS.finetune_iterations}")
    p.add_argument("--batch", type=_positive_int, default=None,
                   help=f"default {_DEFAULTS.finetune_batch}")
    p.add_argument("--seed", type=int, default=None,
                   help="override the checkpoint's sampling seed")
    p.add_argument("--lr", type=float, default=None,
                   help="fine-tune learning rate (default from the "
                        "checkpoint)")
    p.add_argument("--direct-weights", action="store_true",
                   help="optimize the basis weight vector only, leaving "
                        "the network frozen")
    p.add_argument("--update-matrices", action="store_true",
                   help="also update the transform matrices (frozen by "
                        "default during fine-tuning)")
    p.add_argument("--loss-log", default=None, metavar="CSV")
    p.add_argument("--quiet", action="store_true")
    _add_profile(p, default=None)
    _add_workers(p)
    _add_lambdas(p)

    p = sub.add_parser("export",
                       help="zero-shot: predict a lattice without training")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--content", required=True, help="keyframe image path")
    p.add_argument("--style", required=True, help="style image path")
    p.add_argument("--out", required=True, help=".cube file to write")
    p.add_argument("--title", default="", help="TITLE field for the file")

    p = sub.add_parser("apply",
                       help="run a .cube lattice over an image or frames")
    p.add_argument("--cube", required=True)
    p.add_argument("--input", required=True,
                   help="image file, frame directory, or raw .rgb24 dump")
    p.add_argument("--output", required=True,
                   help="output image file or frame directory")
    p.add_argument("--fmt", choices=["png", "ppm"], default="png",
                   help="frame format for directory output")
    p.add_argument("--fps", type=float, default=None)
    _add_workers(p)

    p = sub.add_parser("bench",
                       help="time lattice application at several resolutions")
    p.add_argument("--cube", default=None,
                   help="lattice to time (default: identity)")
    p.add_argument("--dim", type=int, default=_DEFAULTS.dim,
                   help="identity lattice size when no cube is given")
    p.add_argument("--frames", type=_positive_int, default=30)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--resolution", action="append", default=None,
                   choices=[r[0] for r in BENCH_RESOLUTIONS],
                   help="limit to this resolution (repeatable)")
    p.add_argument("--csv", action="store_true", help="machine-readable output")
    _add_workers(p)

    p = sub.add_parser("metrics",
                       help="lattice quality and temporal consistency numbers")
    p.add_argument("--cube", default=None,
                   help="report smoothness and monotonicity of a lattice")
    p.add_argument("--content", default=None,
                   help="content frames (directory or .rgb24)")
    p.add_argument("--stylized", default=None,
                   help="stylized frames to check against the content")
    p.add_argument("--csv", action="store_true", help="machine-readable output")
    return parser


def _progress_printer(total: int, quiet: bool, label: str):
    if quiet or total <= 0:
        return None
    every = max(1, total // 20)

    def progress(it, report):
        if it % every == 0 or it == total - 1:
            print(f"{label} {it + 1}/{total}: total={report.total:.6g} "
                  f"style={report.style:.6g} content={report.content:.6g}",
                  file=sys.stderr)
    return progress


def _cmd_pretrain(args) -> int:
    config = TrainConfig(
        profile=args.profile, dim=args.dim, n_basis=args.basis,
        seed=args.seed, feature_seed=args.feature_seed, lr=args.lr,
        resize=args.resize, iterations=args.iterations, batch=args.batch,
        update_basis=not args.freeze_basis,
        update_matrices=not args.freeze_matrices,
        workers=resolve_workers(args.workers),
        weights=_weights_from_args(args, LossWeights()))
    model = pretrain(args.corpus, config, log_path=args.loss_log,
                     progress=_progress_printer(config.iterations,
                                                args.quiet, "pretrain"))
    save_checkpoint(args.out, model, config, stage="pretrain")
    print(f"saved checkpoint to {args.out}")
    return 0


def _cmd_finetune(args) -> int:
    if args.out_cube is None and args.out_ckpt is None:
        print("finetune: provide --out-cube and/or --out-ckpt",
              file=sys.stderr)
        return 2
    model, config, _ = load_checkpoint(args.ckpt, profile=args.profile)
    over = {"workers": resolve_workers(args.workers),
            "weights": _weights_from_args(args, config.weights)}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.lr is not None:
        over["finetune_lr"] = args.lr
    config = replace(config, **over)
    frames = [load_image(p) for p in args.content]
    style = load_image(args.style)
    iterations = (config.finetune_iterations if args.iterations is None
                  else args.iterations)
    lut = finetune(model, frames, style, config,
                   iterations=iterations, batch=args.batch,
                   direct_weights=args.direct_weights,
                   update_matrices=args.update_matrices or None,
                   log_path=args.loss_log,
                   progress=_progress_printer(iterations, args.quiet,
                                              "finetune"))
    if args.out_cube is not None:
        write_cube_file(lut, args.out_cube, title="nlut finetune")
        print(f"saved cube to {args.out_cube}")
    if args.out_ckpt is not None:
        save_checkpoint(args.out_ckpt, model, config, stage="finetune")
        print(f"saved checkpoint to {args.out_ckpt}")
    return 0


def _cmd_export(args) -> int:
    model, config, _ = load_checkpoint(args.ckpt)
    from .video import resize_bilinear

    rw, rh = config.resize
    content = resize_bilinear(load_image(args.content), rw, rh)
    style = resize_bilinear(load_image(args.style), rw, rh)
    lut = lut_from_weights(model, predict_weights(model, content, style))
    write_cube_file(lut, args.out, title=args.title)
    print(f"saved cube to {args.out}")
    return 0


def _cmd_apply(args) -> int:
    lut = read_cube_file(args.cube)
    workers = resolve_workers(args.workers)
    in_path = Path(args.input)
    if in_path.is_file() and args.input.lower().endswith(_IMAGE_SUFFIXES):
        out = apply_image(lut, load_image(args.input), workers=workers)
        save_image(out, args.output)
        print(f"wrote {args.output}")
        return 0
    seq = load_frames(args.input, fps=args.fps)
    styled = stylize_video(lut, seq, workers=workers)
    save_frames(styled, args.output, fmt=args.fmt)
    print(f"wrote {styled.count} frames to {args.output}")
    return 0


def _cmd_bench(args) -> int:
    lut = (make_identity(args.dim) if args.cube is None
           else read_cube_file(args.cube))
    resolutions = BENCH_RESOLUTIONS
    if args.resolution:
        wanted = set(args.resolution)
        resolutions = tuple(r for r in BENCH_RESOLUTIONS if r[0] in wanted)
    report = bench(lut, resolutions=resolutions,
                   workers=resolve_workers(args.workers),
                   frames=args.frames, warmup=args.warmup)
    out = report.as_csv() if args.csv else report.as_text()
    sys.stdout.write(out)
    return 0


def _cmd_metrics(args) -> int:
    if (args.content is None) != (args.stylized is None):
        print("metrics: --content and --stylized go together",
              file=sys.stderr)
        return 2
    have_pair = args.content is not None and args.stylized is not None
    if args.cube is None and not have_pair:
        print("metrics: provide --cube and/or both --content and --stylized",
              file=sys.stderr)
        return 2
    rows: list[tuple[str, object]] = []
    if args.cube is not None:
        lut = read_cube_file(args.cube)
        rows.append(("smoothness", smoothness(lut)))
        rows.append(("monotonicity_penalty", monotonicity_penalty(lut)))
    if have_pair:
        rep = consistency_check(load_frames(args.content),
                                load_frames(args.stylized))
        rows += [("max_spread", rep.max_spread), ("flicker", rep.flicker),
                 ("color_count", rep.color_count),
                 ("frame_count", rep.frame_count)]
    if args.csv:
        print("metric,value")
        for name, value in rows:
            print(f"{name},{value:.10g}" if isinstance(value, float)
                  else f"{name},{value}")
    else:
        width = max(len(name) for name, _ in rows)
        for name, value in rows:
            text = f"{value:.10g}" if isinstance(value, float) else str(value)
            print(f"{name:<{width}}  {text}")
    return 0


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "export": _cmd_export,
    "apply": _cmd_apply,
    "bench": _cmd_bench,
    "metrics": _cmd_metrics,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"nlut {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (NlutError, ValueError, OSError) as exc:
        print(f"nlut {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
