"""Frame sequence I/O, resizing, lattice application over video, metrics.

Supported sources: a directory of PNG or binary PPM frames, or a single
raw .rgb24 dump whose filename carries the geometry (for example
clip_1920x1080.rgb24).  Pixel bytes are mapped to [0, 1] by v/255 on load
and back by round(v*255) on save.
"""

from __future__ import annotations

import os
import re
import time
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

from .lut3d import Image, Lut3D, apply_image

_RAW_NAME = re.compile(r"(\d+)x(\d+)\.rgb24$")


@dataclass
class FrameSequence:
    frames: list[Image]
    fps: float | None = None

    def __post_init__(self) -> None:
        if self.frames:
            w, h = self.frames[0].width, self.frames[0].height
            for i, f in enumerate(self.frames):
                if (f.width, f.height) != (w, h):
                    raise ValueError(
                        f"frame {i} is {f.width}x{f.height}, expected {w}x{h}")

    @property
    def count(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __iter__(self):
        return iter(self.frames)

    def __len__(self) -> int:
        return len(self.frames)


def quantize(planes: np.ndarray) -> np.ndarray:
    """Map float planes to uint8 by round(v*255), clipped to [0, 255]."""
    return np.clip(np.rint(planes * 255.0), 0, 255).astype(np.uint8)


def load_image(path: str) -> Image:
    """Read one PNG, PPM, or other raster file into float planes."""
    if path.lower().endswith((".ppm", ".pnm")):
        with open(path, "rb") as f:
            return _parse_ppm(f.read(), path)
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    return Image.from_array(arr)


def save_image(img: Image, path: str) -> None:
    q = quantize(img.planes)
    if path.lower().endswith((".ppm", ".pnm")):
        header = f"P6\n{img.width} {img.height}\n255\n".encode("ascii")
        with open(path, "wb") as f:
            f.write(header)
            f.write(np.transpose(q, (1, 2, 0)).tobytes())
        return
    PILImage.fromarray(np.transpose(q, (1, 2, 0))).save(path)


def _parse_ppm(blob: bytes, path: str) -> Image:
    # Binary PPM: "P6", width, height, maxval as whitespace-separated
    # tokens (comments allowed), one whitespace byte, then raw samples.
    pos = 0
    tokens = []
    while len(tokens) < 4:
        if pos >= len(blob):
            raise ValueError(f"{path}: truncated PPM header")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            pos = blob.find(b"\n", pos)
            if pos < 0:
                raise ValueError(f"{path}: truncated PPM comment")
            continue
        if ch.isspace():
            pos += 1
            continue
        end = pos
        while end < len(blob) and not blob[end:end + 1].isspace():
            end += 1
        tokens.append(blob[pos:end])
        pos = end
    pos += 1  # the single whitespace after maxval
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ValueError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    need = width * height * 3
    data = blob[pos:pos + need]
    if len(data) < need:
        raise ValueError(
            f"{path}: expected {need} pixel bytes, got {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
    return Image.from_array(arr)


def load_frames(path: str, fps: float | None = None) -> FrameSequence:
    """Load a directory of image frames or one raw .rgb24 dump."""
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path)
                       if n.lower().endswith((".png", ".ppm", ".pnm")))
        if not names:
            raise ValueError(f"{path}: no PNG or PPM frames found")
        frames = [load_image(os.path.join(path, n)) for n in names]
        return FrameSequence(frames, fps=fps)
    if path.endswith(".rgb24"):
        m = _RAW_NAME.search(os.path.basename(path))
        if not m:
            raise ValueError(
                f"{path}: raw frame files must be named like clip_WxH.rgb24")
        width, height = int(m.group(1)), int(m.group(2))
        blob = np.fromfile(path, dtype=np.uint8)
        stride = width * height * 3
        if blob.size == 0 or blob.size % stride:
            raise ValueError(
                f"{path}: size {blob.size} is not a multiple of "
                f"{width}x{height}x3 bytes")
        frames = [Image.from_array(chunk.reshape(height, width, 3))
                  for chunk in blob.reshape(-1, stride)]
        return FrameSequence(frames, fps=fps)
    raise ValueError(f"{path}: not a frame directory or .rgb24 file")


def save_frames(seq: FrameSequence, out_dir: str, fmt: str = "png") -> list[str]:
    if fmt not in ("png", "ppm"):
        raise ValueError(f"unsupported frame format {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for i, frame in enumerate(seq):
        p = os.path.join(out_dir, f"frame_{i:05d}.{fmt}")
        save_image(frame, p)
        paths.append(p)
    return paths


def resize_bilinear(img: Image, width: int, height: int) -> Image:
    """Separable bilinear resample with centered sample positions."""
    if width < 1 or height < 1:
        raise ValueError("target size must be positive")
    src = img.planes.astype(np.float64)
    h, w = src.shape[1], src.shape[2]
    ys = np.clip((np.arange(height) + 0.5) * (h / height) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(width) + 0.5) * (w / width) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    rows = src[:, y0, :] * (1.0 - wy) + src[:, y1, :] * wy
    out = rows[:, :, x0] * (1.0 - wx) + rows[:, :, x1] * wx
    return Image(out.astype(np.float32))


def stylize_video(lut: Lut3D, seq: FrameSequence,
                  workers: int = 1) -> FrameSequence:
    """Apply one lattice to every frame."""
    return FrameSequence([apply_image(lut, f, workers=workers) for f in seq],
                         fps=seq.fps)


@dataclass
class ConsistencyReport:
    max_spread: float
    flicker: float
    color_count: int
    frame_count: int


def consistency_check(content: FrameSequence,
                      stylized: FrameSequence) -> ConsistencyReport:
    """Per-color determinism and temporal stability of a stylized sequence.

    Every distinct 24-bit content color must map to one output value;
    max_spread is the widest per-channel output range observed for any
    single input color (0 for a true per-pixel lattice).  Flicker compares
    frame-to-frame output changes against the changes the observed
    color-to-output map explains; it is 0 when the mapping alone accounts
    for all temporal variation.
    """
    if content.count != stylized.count:
        raise ValueError(
            f"sequences differ in length: {content.count} vs {stylized.count}")
    if content.count == 0:
        raise ValueError("sequences are empty")
    if (content.width, content.height) != (stylized.width, stylized.height):
        raise ValueError("content and stylized frame sizes differ")

    keys_per_frame = []
    for frame in content:
        q = quantize(frame.planes).astype(np.uint32)
        keys_per_frame.append(
            (q[0] << 16 | q[1] << 8 | q[2]).reshape(-1))
    keys = np.concatenate(keys_per_frame)
    outs = np.concatenate(
        [f.planes.reshape(3, -1) for f in stylized], axis=1)

    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    so = outs[:, order]
    starts = np.flatnonzero(np.diff(sk)) + 1
    bounds = np.concatenate(([0], starts))
    uniq = sk[bounds]
    counts = np.diff(np.concatenate((bounds, [sk.size])))

    spread = 0.0
    means = np.empty((3, uniq.size), dtype=np.float64)
    for c in range(3):
        hi = np.maximum.reduceat(so[c], bounds)
        lo = np.minimum.reduceat(so[c], bounds)
        spread = max(spread, float((hi - lo).max()))
        means[c] = np.add.reduceat(so[c].astype(np.float64), bounds) / counts

    flicker = 0.0
    if content.count > 1:
        total = 0.0
        n = 0
        prev_idx = np.searchsorted(uniq, keys_per_frame[0])
        prev_out = stylized.frames[0].planes.reshape(3, -1).astype(np.float64)
        for t in range(1, content.count):
            idx = np.searchsorted(uniq, keys_per_frame[t])
            out = stylized.frames[t].planes.reshape(3, -1).astype(np.float64)
            observed = out - prev_out
            explained = means[:, idx] - means[:, prev_idx]
            total += float(np.abs(observed - explained).sum())
            n += observed.size
            prev_idx, prev_out = idx, out
        flicker = total / n
    return ConsistencyReport(max_spread=spread, flicker=flicker,
                             color_count=int(uniq.size),
                             frame_count=content.count)


# Resolutions a report covers by default, smallest first.
BENCH_RESOLUTIONS: tuple[tuple[str, int, int], ...] = (
    ("512", 512, 512),
    ("HD", 1280, 720),
    ("FHD", 1920, 1080),
    ("QHD", 2560, 1440),
    ("2000", 2000, 2000),
    ("4K", 3840, 2160),
    ("5K", 5120, 2880),
    ("8K", 7680, 4320),
)

BENCH_NOTE = ("Reference GPU implementation reports 1.72 ms per 8K frame; "
              "CPU timings below are not comparable to that figure.")


@dataclass
class BenchRow:
    label: str
    width: int
    height: int
    ms_mean: float
    ms_std: float
    ns_per_pixel: float
    workers: int


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    note: str = BENCH_NOTE

    def as_csv(self) -> str:
        lines = ["label,width,height,ms_mean,ms_std,ns_per_pixel,workers"]
        for r in self.rows:
            lines.append(f"{r.label},{r.width},{r.height},{r.ms_mean:.4f},"
                         f"{r.ms_std:.4f},{r.ns_per_pixel:.4f},{r.workers}")
        return "\n".join(lines) + "\n"

    def as_text(self) -> str:
        lines = [self.note,
                 f"{'label':>6} {'size':>11} {'ms/frame':>10} "
                 f"{'std':>8} {'ns/px':>8} {'workers':>7}"]
        for r in self.rows:
            lines.append(f"{r.label:>6} {r.width:>5}x{r.height:<5} "
                         f"{r.ms_mean:>10.3f} {r.ms_std:>8.3f} "
                         f"{r.ns_per_pixel:>8.3f} {r.workers:>7}")
        return "\n".join(lines) + "\n"


def bench_frame(width: int, height: int) -> Image:
    """Deterministic full-range gradient frame used for timing."""
    x = np.linspace(0.0, 1.0, width, dtype=np.float32)
    y = np.linspace(0.0, 1.0, height, dtype=np.float32)
    planes = np.empty((3, height, width), dtype=np.float32)
    planes[0] = x[None, :]
    planes[1] = y[:, None]
    planes[2] = (x[None, :] + y[:, None]) * 0.5
    return Image(planes)


def bench(lut: Lut3D,
          resolutions: tuple[tuple[str, int, int], ...] = BENCH_RESOLUTIONS,
          workers: int = 1, frames: int = 30, warmup: int = 3) -> BenchReport:
    """Time lattice application on synthetic frames at several resolutions."""
    if frames < 1 or warmup < 0:
        raise ValueError("need at least one timed frame")
    report = BenchReport()
    for label, width, height in resolutions:
        frame = bench_frame(width, height)
        for _ in range(warmup):
            apply_image(lut, frame, workers=workers)
        times = np.empty(frames, dtype=np.float64)
        for i in range(frames):
            t0 = time.perf_counter()
            apply_image(lut, frame, workers=workers)
            times[i] = time.perf_counter() - t0
        ms = times * 1e3
        mean = float(ms.mean())
        report.rows.append(BenchRow(
            label=label, width=width, height=height, ms_mean=mean,
            ms_std=float(ms.std()),
            ns_per_pixel=mean * 1e6 / (width * height),
            workers=workers))
    return report
