#!/usr/bin/env python3
"""Regenerate everything under fixtures/ from scratch.

Stages:
    corpus          eight synthetic 256x256 training images
    pair            uniform gray keyframe + uniform red style image
    frames          short moving-gradient clip as PPM frames
    style           a teal/orange style image for the demos
    golden-cube     byte-stable identity lattice file
    pretrained      200-iteration seed-7 checkpoint (slow, ~10 min)
    golden-finetune fine-tuned lattice reproduced by `nlut finetune --seed 7`
    all             everything above, in order

The cheap stages are pure recipes: same bytes on any machine. The two
slow stages depend on float32 arithmetic; regenerate them together and
on one machine, or `finetune --seed 7` will not match the golden file.

Usage: python3 tools/make_fixtures.py [stage ...]
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from nlut.cli import main as nlut_main                      # noqa: E402
from nlut.lut3d import Image, make_identity, write_cube_file  # noqa: E402
from nlut.trainer import TrainConfig, pretrain, save_checkpoint  # noqa: E402
from nlut.video import FrameSequence, resize_bilinear, save_frames, \
    save_image  # noqa: E402

ROOT = Path(__file__).resolve().parent.parent / "fixtures"
SIZE = 256

PRETRAIN_SEED = 7


def _grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate planes (y, x) in [0, 1], shaped (n, n)."""
    t = np.linspace(0.0, 1.0, n, dtype=np.float32)
    return np.meshgrid(t, t, indexing="ij")


def _smooth_noise(rng: np.random.Generator, cells: int, n: int) -> np.ndarray:
    """Low-frequency texture: coarse noise upsampled bilinearly to (n, n)."""
    coarse = rng.uniform(-1.0, 1.0, size=(3, cells, cells)).astype(np.float32)
    return resize_bilinear(Image(coarse), n, n).planes


def _sunset(n: int) -> np.ndarray:
    y, _ = _grid(n)
    rng = np.random.default_rng(1001)
    img = np.stack([0.92 - 0.55 * y, 0.48 - 0.28 * y, 0.22 + 0.48 * y])
    return img + 0.02 * _smooth_noise(rng, 16, n)


def _ocean(n: int) -> np.ndarray:
    _, x = _grid(n)
    rng = np.random.default_rng(1002)
    img = np.stack([0.05 + 0.22 * x, 0.42 + 0.30 * x, 0.55 + 0.38 * x])
    return img + 0.03 * _smooth_noise(rng, 24, n)


def _meadow(n: int) -> np.ndarray:
    y, x = _grid(n)
    rng = np.random.default_rng(1003)
    horizon = 1.0 / (1.0 + np.exp(-(y - 0.42) * 30.0))
    sky = np.stack([0.50 + 0.1 * x, 0.68 + 0.05 * y, 0.95 - 0.1 * y])
    grass = np.stack([0.18 + 0.1 * y, 0.52 + 0.1 * y, 0.16 + 0.05 * x])
    img = sky * (1.0 - horizon) + grass * horizon
    return img + 0.05 * horizon * _smooth_noise(rng, 48, n)


def _weave(n: int) -> np.ndarray:
    y, x = _grid(n)
    wave = np.sin(2 * np.pi * 4 * x) * np.sin(2 * np.pi * 4 * y)
    v = 0.5 + 0.27 * wave
    return np.stack([v, v * 0.93, v * 0.86])


def _blobs(n: int) -> np.ndarray:
    y, x = _grid(n)
    rng = np.random.default_rng(1005)
    img = np.full((3, n, n), 0.12, dtype=np.float32)
    for _ in range(6):
        cy, cx = rng.uniform(0.1, 0.9, size=2)
        sigma = rng.uniform(0.06, 0.18)
        color = rng.uniform(0.3, 0.95, size=3)
        bump = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * sigma * sigma))
        img += color[:, None, None] * bump.astype(np.float32)
    peak = img.max()
    return 0.05 + 0.9 * img / peak


def _fog(n: int) -> np.ndarray:
    rng = np.random.default_rng(1006)
    base = np.array([0.55, 0.58, 0.63], dtype=np.float32)[:, None, None]
    return base + 0.16 * _smooth_noise(rng, 8, n)


def _stripes(n: int) -> np.ndarray:
    y, x = _grid(n)
    t = 0.5 + 0.5 * np.sin(2 * np.pi * 6 * (x + y))
    a = np.array([0.80, 0.22, 0.66], dtype=np.float32)[:, None, None]
    b = np.array([0.18, 0.70, 0.32], dtype=np.float32)[:, None, None]
    return a * t + b * (1.0 - t)


def _vignette(n: int) -> np.ndarray:
    y, x = _grid(n)
    r2 = (y - 0.5) ** 2 + (x - 0.5) ** 2
    glow = np.exp(-r2 / 0.12)
    warm = np.array([0.96, 0.76, 0.50], dtype=np.float32)[:, None, None]
    dark = np.array([0.10, 0.08, 0.13], dtype=np.float32)[:, None, None]
    return dark + (warm - dark) * glow


CORPUS = [
    ("sunset", _sunset), ("ocean", _ocean), ("meadow", _meadow),
    ("weave", _weave), ("blobs", _blobs), ("fog", _fog),
    ("stripes", _stripes), ("vignette", _vignette),
]


def stage_corpus() -> None:
    out = ROOT / "corpus"
    out.mkdir(parents=True, exist_ok=True)
    for i, (name, fn) in enumerate(CORPUS):
        planes = np.clip(fn(SIZE), 0.0, 1.0)
        save_image(Image(planes.astype(np.float32)), str(out / f"{i}_{name}.png"))
    print(f"corpus: wrote {len(CORPUS)} images to {out}")


def stage_pair() -> None:
    out = ROOT / "pair"
    out.mkdir(parents=True, exist_ok=True)
    save_image(Image.filled(SIZE, SIZE, (0.5, 0.5, 0.5)),
               str(out / "content_gray.png"))
    save_image(Image.filled(SIZE, SIZE, (0.8, 0.1, 0.1)),
               str(out / "style_red.png"))
    print(f"pair: wrote content_gray.png and style_red.png to {out}")


def stage_frames() -> None:
    out = ROOT / "frames"
    out.mkdir(parents=True, exist_ok=True)
    w, h = 192, 160
    y, x = np.meshgrid(np.linspace(0, 1, h, dtype=np.float32),
                       np.linspace(0, 1, w, dtype=np.float32), indexing="ij")
    frames = []
    for k in range(3):
        shift = 0.12 * k
        planes = np.stack([
            np.clip(0.15 + 0.7 * ((x + shift) % 1.0), 0, 1),
            np.clip(0.25 + 0.5 * y, 0, 1),
            np.clip(0.85 - 0.6 * ((x + shift) % 1.0), 0, 1),
        ])
        frames.append(Image(planes))
    save_frames(FrameSequence(frames), str(out), fmt="ppm")
    print(f"frames: wrote 3 PPM frames to {out}")


def stage_style() -> None:
    y, x = _grid(SIZE)
    t = 0.5 + 0.5 * np.tanh((x - y) * 3.0)
    teal = np.array([0.10, 0.55, 0.60], dtype=np.float32)[:, None, None]
    orange = np.array([0.95, 0.55, 0.20], dtype=np.float32)[:, None, None]
    save_image(Image((teal * (1 - t) + orange * t).astype(np.float32)),
               str(ROOT / "style.png"))
    print(f"style: wrote {ROOT / 'style.png'}")


def stage_golden_cube() -> None:
    out = ROOT / "golden"
    out.mkdir(parents=True, exist_ok=True)
    write_cube_file(make_identity(2), str(out / "identity_d2.cube"),
                    title="identity d=2")
    print(f"golden-cube: wrote {out / 'identity_d2.cube'}")


def stage_pretrained() -> None:
    out = ROOT / "pretrained"
    out.mkdir(parents=True, exist_ok=True)
    config = TrainConfig(seed=PRETRAIN_SEED)
    t0 = time.perf_counter()
    last = [0]

    def progress(it, report):
        if it - last[0] >= 20 or it in (0, config.iterations - 1):
            last[0] = it
            print(f"  iter {it + 1}/{config.iterations} "
                  f"total={report.total:.5g}", flush=True)

    model = pretrain(str(ROOT / "corpus"), config, progress=progress,
                     log_path=str(out / "desk_loss.csv"))
    save_checkpoint(str(out / "desk.ckpt"), model, config, stage="pretrain")
    print(f"pretrained: wrote {out / 'desk.ckpt'} "
          f"in {time.perf_counter() - t0:.0f} s")


def stage_golden_finetune() -> None:
    out = ROOT / "golden"
    out.mkdir(parents=True, exist_ok=True)
    # Through the CLI on purpose: the golden file certifies the exact
    # command documented in the README, not just the library call.
    code = nlut_main([
        "finetune",
        "--ckpt", str(ROOT / "pretrained" / "desk.ckpt"),
        "--content", str(ROOT / "pair" / "content_gray.png"),
        "--style", str(ROOT / "pair" / "style_red.png"),
        "--seed", "7", "--quiet",
        "--out-cube", str(out / "finetune_seed7.cube"),
    ])
    if code != 0:
        raise SystemExit(f"finetune exited with {code}")
    print(f"golden-finetune: wrote {out / 'finetune_seed7.cube'}")


STAGES = {
    "corpus": stage_corpus,
    "pair": stage_pair,
    "frames": stage_frames,
    "style": stage_style,
    "golden-cube": stage_golden_cube,
    "pretrained": stage_pretrained,
    "golden-finetune": stage_golden_finetune,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("stages", nargs="*", default=["all"],
                        choices=[*STAGES, "all"], metavar="stage",
                        help=f"one of: {', '.join([*STAGES, 'all'])}")
    args = parser.parse_args(argv)
    wanted = list(STAGES) if "all" in args.stages else args.stages
    for name in wanted:
        STAGES[name]()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
