"""Dense 3D lookup tables: construction, trilinear application, .cube I/O.

A table of dimension D maps RGB colors in the unit cube through trilinear
interpolation over a D x D x D lattice.  Entry [c][i][j][k] is the output for
channel c at lattice color (i/(D-1), j/(D-1), k/(D-1)); axis i follows red,
j green, k blue.  Entries may leave [0, 1]; inputs are clamped to the domain
before lookup.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CubeParseError
from .kernels import lookup_planes, scatter_planes


class Rgb(NamedTuple):
    r: float
    g: float
    b: float


@dataclass(frozen=True)
class Lut3D:
    """An immutable 3D lookup table with entries shaped (3, D, D, D)."""

    dim: int
    entries: np.ndarray
    # Interleaved (D^3, 3) copy the compiled kernels read; built once.
    table: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError(f"lut dimension must be >= 2, got {self.dim}")
        want = (3, self.dim, self.dim, self.dim)
        if not isinstance(self.entries, np.ndarray) or self.entries.shape != want:
            raise ValueError(f"entries must have shape {want}")
        if self.entries.dtype not in (np.float32, np.float64):
            raise ValueError("entries must be float32 or float64")
        if not np.isfinite(self.entries).all():
            raise ValueError("entries must be finite")
        frozen = np.array(self.entries, copy=True)
        frozen.flags.writeable = False
        table = np.ascontiguousarray(np.transpose(frozen, (1, 2, 3, 0)))
        table = table.reshape(self.dim ** 3, 3)
        table.flags.writeable = False
        object.__setattr__(self, "entries", frozen)
        object.__setattr__(self, "table", table)


@dataclass
class Image:
    """An RGB image stored as float32 channel planes shaped (3, H, W)."""

    planes: np.ndarray

    def __post_init__(self) -> None:
        p = np.ascontiguousarray(self.planes, dtype=np.float32)
        if p.ndim != 3 or p.shape[0] != 3:
            raise ValueError(f"planes must have shape (3, H, W), got {p.shape}")
        self.planes = p

    @property
    def height(self) -> int:
        return self.planes.shape[1]

    @property
    def width(self) -> int:
        return self.planes.shape[2]

    @property
    def pixels(self) -> np.ndarray:
        """Row-major (H, W, 3) copy of the pixel data."""
        return self.to_array()

    def pixel(self, x: int, y: int) -> Rgb:
        return Rgb(*(float(self.planes[c, y, x]) for c in range(3)))

    def to_array(self) -> np.ndarray:
        return np.ascontiguousarray(np.transpose(self.planes, (1, 2, 0)))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        """Build from a (H, W, 3) array; uint8 input is scaled to [0, 1]."""
        a = np.asarray(arr)
        if a.ndim != 3 or a.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got {a.shape}")
        if a.dtype == np.uint8:
            a = a.astype(np.float32) / 255.0
        return cls(np.transpose(a, (2, 0, 1)).astype(np.float32))

    @classmethod
    def filled(cls, width: int, height: int, color: Sequence[float]) -> "Image":
        planes = np.empty((3, height, width), dtype=np.float32)
        for c in range(3):
            planes[c] = color[c]
        return cls(planes)


def make_identity(dim: int, dtype: np.dtype = np.float32) -> Lut3D:
    """The identity table: every lattice point maps to its own color."""
    lat = np.linspace(0.0, 1.0, dim, dtype=dtype)
    entries = np.empty((3, dim, dim, dim), dtype=dtype)
    entries[0] = lat[:, None, None]
    entries[1] = lat[None, :, None]
    entries[2] = lat[None, None, :]
    return Lut3D(dim, entries)


def apply_color(lut: Lut3D, color: Sequence[float]) -> Rgb:
    """Look one color up; inputs outside [0, 1] are clamped."""
    if len(color) != 3:
        raise ValueError("color must have three components")
    planes = np.array([[color[0]], [color[1]], [color[2]]],
                      dtype=lut.entries.dtype)
    out = lookup_planes(lut.table, planes, lut.dim)
    return Rgb(float(out[0, 0]), float(out[1, 0]), float(out[2, 0]))


def apply_image(lut: Lut3D, img: Image, workers: int = 1) -> Image:
    """Apply the table to every pixel.  Bit-identical for any worker count."""
    flat = img.planes.reshape(3, -1)
    if lut.entries.dtype != np.float32:
        flat = flat.astype(lut.entries.dtype)
    out = lookup_planes(lut.table, flat, lut.dim, workers=workers)
    return Image(out.astype(np.float32, copy=False).reshape(img.planes.shape))


def apply_planes(entries: np.ndarray, planes: np.ndarray,
                 workers: int = 1) -> np.ndarray:
    """Raw-array lookup used by the training graph: (3, P) planes in and out."""
    dim = entries.shape[1]
    table = np.ascontiguousarray(np.transpose(entries, (1, 2, 3, 0)))
    table = table.reshape(dim ** 3, 3)
    planes = np.ascontiguousarray(planes, dtype=entries.dtype)
    return lookup_planes(table, planes, dim, workers=workers)


def apply_image_backward(lut: Lut3D, img: Image | np.ndarray,
                         upstream: np.ndarray, workers: int = 1) -> np.ndarray:
    """Gradient of a scalar loss w.r.t. the table entries.

    `upstream` holds d(loss)/d(output pixel) with the same shape as the image
    planes.  No gradient flows to the input pixels.  Returns (3, D, D, D).
    """
    planes = img.planes if isinstance(img, Image) else np.asarray(img)
    return entries_grad(lut.dim, planes, upstream, workers=workers)


def entries_grad(dim: int, planes: np.ndarray, upstream: np.ndarray,
                 workers: int = 1) -> np.ndarray:
    if upstream.shape != planes.shape:
        raise ValueError(
            f"upstream shape {upstream.shape} must match image {planes.shape}")
    dtype = upstream.dtype
    flat = np.ascontiguousarray(planes.reshape(3, -1), dtype=dtype)
    up = np.ascontiguousarray(upstream.reshape(3, -1), dtype=dtype)
    acc = scatter_planes(dtype, dim, flat, up, workers=workers)
    grad = np.transpose(acc.reshape(dim, dim, dim, 3), (3, 0, 1, 2))
    return np.ascontiguousarray(grad)


def write_cube(lut: Lut3D, title: str = "") -> bytes:
    """Serialize to the .cube interchange format (red index fastest)."""
    lines = [f'TITLE "{title}"',
             f"LUT_3D_SIZE {lut.dim}",
             "DOMAIN_MIN 0.000000 0.000000 0.000000",
             "DOMAIN_MAX 1.000000 1.000000 1.000000"]
    ordered = np.transpose(lut.entries, (3, 2, 1, 0)).reshape(-1, 3)
    lines.extend(f"{v[0]:.6f} {v[1]:.6f} {v[2]:.6f}" for v in ordered)
    return ("\n".join(lines) + "\n").encode("utf-8")


def read_cube(data: bytes | str) -> Lut3D:
    """Parse a .cube stream; raises CubeParseError with the offending line."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    dim = 0
    values: list[tuple[float, float, float]] = []
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        word = line.split()[0]
        if word == "TITLE":
            continue
        if word == "LUT_3D_SIZE":
            parts = line.split()
            if len(parts) != 2 or not parts[1].isdigit():
                raise CubeParseError(f"line {num}: malformed LUT_3D_SIZE")
            dim = int(parts[1])
            if dim < 2:
                raise CubeParseError(f"line {num}: LUT_3D_SIZE must be >= 2")
            continue
        if word in ("DOMAIN_MIN", "DOMAIN_MAX"):
            parts = line.split()
            want = 0.0 if word == "DOMAIN_MIN" else 1.0
            try:
                nums = [float(p) for p in parts[1:]]
            except ValueError:
                raise CubeParseError(f"line {num}: malformed {word}") from None
            if len(nums) != 3 or any(v != want for v in nums):
                raise CubeParseError(
                    f"line {num}: only the unit domain is supported")
            continue
        if word == "LUT_1D_SIZE":
            raise CubeParseError(f"line {num}: 1D tables are not supported")
        parts = line.split()
        if len(parts) != 3:
            raise CubeParseError(
                f"line {num}: expected three values, got {line!r}")
        if dim == 0:
            raise CubeParseError(
                f"line {num}: data before LUT_3D_SIZE")
        try:
            values.append((float(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError:
            raise CubeParseError(
                f"line {num}: expected three numbers, got {line!r}") from None
    if dim == 0:
        raise CubeParseError("missing LUT_3D_SIZE")
    if len(values) != dim ** 3:
        raise CubeParseError(
            f"expected {dim ** 3} data lines, got {len(values)}")
    arr = np.array(values, dtype=np.float32).reshape(dim, dim, dim, 3)
    entries = np.ascontiguousarray(np.transpose(arr, (3, 2, 1, 0)))
    return Lut3D(dim, entries)


def read_cube_file(path: str) -> Lut3D:
    with open(path, "rb") as f:
        return read_cube(f.read())


def write_cube_file(lut: Lut3D, path: str, title: str = "") -> None:
    with open(path, "wb") as f:
        f.write(write_cube(lut, title))
