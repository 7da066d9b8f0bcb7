#!/usr/bin/env python3
"""Walk through the 3D lattice core: build, apply, serialize.

A color lattice stores one output color per grid point over the RGB cube;
arbitrary colors blend the 8 surrounding corners trilinearly. The identity
lattice maps every color to itself, which makes it a handy sanity anchor:
whatever the lattice machinery does to it must be invisible in the output.
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from nlut.lut3d import (Image, Lut3D, apply_color, apply_image,
                        make_identity, read_cube_file, write_cube,
                        write_cube_file)

rng = np.random.default_rng(7)

print("== identity lattice ==")
ident = make_identity(17)
print(f"dim={ident.dim}, entries shape {ident.entries.shape}")
probe = rng.uniform(0, 1, size=(5, 3)).astype(np.float32)
for r, g, b in probe:
    out = apply_color(ident, (r, g, b))
    print(f"  ({r:.3f}, {g:.3f}, {b:.3f}) -> "
          f"({out.r:.3f}, {out.g:.3f}, {out.b:.3f})")

print("\n== a hand-made warming lattice ==")
warm = make_identity(17).entries.copy()
warm[0] = np.clip(warm[0] * 1.12 + 0.02, 0, 1)   # push red up
warm[2] = warm[2] * 0.9                          # pull blue down
warm_lut = Lut3D(17, warm)
gray = Image.filled(64, 64, (0.5, 0.5, 0.5))
toned = apply_image(warm_lut, gray)
print(f"uniform gray 0.5 becomes "
      f"({toned.planes[0,0,0]:.3f}, {toned.planes[1,0,0]:.3f}, "
      f"{toned.planes[2,0,0]:.3f})")

print("\n== .cube round trip ==")
with tempfile.TemporaryDirectory() as tmp:
    path = str(Path(tmp) / "warm.cube")
    write_cube_file(warm_lut, path, title="warm demo")
    back = read_cube_file(path)
    err = float(np.abs(back.entries - warm_lut.entries).max())
    print(f"wrote + re-read {path.split('/')[-1]}: "
          f"max abs round-trip error {err:.2e}")
    print("first lines of the file:")
    for line in write_cube(warm_lut, "warm demo").decode().splitlines()[:5]:
        print(f"  {line}")

print("\n== applying the identity is a no-op ==")
noise = Image(rng.uniform(0, 1, size=(3, 48, 48)).astype(np.float32))
out = apply_image(ident, noise)
print(f"max |out - in| = {float(np.abs(out.planes - noise.planes).max()):.2e}")
