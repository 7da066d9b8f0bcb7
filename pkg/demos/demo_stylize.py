#!/usr/bin/env python3
"""End-to-end stylization: predict a lattice, fine-tune it, apply it.

Needs the bundled pretrained checkpoint (fixtures/pretrained/desk.ckpt; see
tools/make_fixtures.py). The flow mirrors production use: one forward pass
predicts a stylized lattice from a content/style pair in milliseconds, and
a short fine-tune specializes it further to that exact pair.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from nlut.lut3d import apply_image
from nlut.network import lut_from_weights, predict_weights
from nlut.trainer import finetune, load_checkpoint
from nlut.video import load_image

root = Path(__file__).resolve().parent.parent / "fixtures"
ckpt = root / "pretrained" / "desk.ckpt"
if not ckpt.exists():
    sys.exit(f"missing {ckpt}; run: python3 tools/make_fixtures.py pretrained")

model, config, stage = load_checkpoint(str(ckpt))
print(f"loaded {ckpt.name}: stage={stage}, profile={config.profile}, "
      f"D={config.dim}, N={config.n_basis}")

content = load_image(str(root / "pair" / "content_gray.png"))
style = load_image(str(root / "pair" / "style_red.png"))


def mean_rgb(img):
    return tuple(float(img.planes[c].mean()) for c in range(3))

print(f"\ncontent mean rgb: {tuple(f'{v:.3f}' for v in mean_rgb(content))}")
print(f"style   mean rgb: {tuple(f'{v:.3f}' for v in mean_rgb(style))}")

print("\n== zero-shot prediction ==")
t0 = time.perf_counter()
weights = predict_weights(model, content, style)
lut = lut_from_weights(model, weights)
print(f"predicted {config.n_basis} blend weights in "
      f"{time.perf_counter() - t0:.2f} s; "
      f"range [{weights.min():+.3f}, {weights.max():+.3f}]")
out = apply_image(lut, content)
print(f"stylized mean rgb: {tuple(f'{v:.3f}' for v in mean_rgb(out))}")

print("\n== 20-iteration fine-tune on this exact pair ==")
t0 = time.perf_counter()
tuned = finetune(model, [content], style, config,
                 progress=lambda it, rep: print(
                     f"  iter {it + 1:2d}: style={rep.style:.4f} "
                     f"content={rep.content:.4f}")
                 if it % 5 == 0 or it == 19 else None)
print(f"fine-tuned in {time.perf_counter() - t0:.1f} s")
out = apply_image(tuned, content)
print(f"stylized mean rgb after tuning: "
      f"{tuple(f'{v:.3f}' for v in mean_rgb(out))}")
print("(red should have moved toward the style's 0.8)")
