"""Frozen multi-scale feature extractor.

Four convolutional stages produce a pyramid: level 1 keeps the input
resolution and each later stage halves it, so level j is H / 2^(j-1).
Stage j applies a 3x3 same-channel conv, relu, then a 3x3 widening conv
(stride 2 from stage 2 on), relu.  Kernels are bias-free, drawn once from
a seeded uniform distribution at scale 1/sqrt(fan-in), and never trained;
the network only ever reads these features, so a fixed random basis is
enough to carry color statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, conv2d, relu

PROFILES: dict[str, tuple[int, int, int, int]] = {
    "desk": (16, 32, 64, 128),
    "paper": (64, 128, 256, 512),
}


@dataclass(frozen=True)
class ExtractorProfile:
    name: str
    channels: tuple[int, int, int, int]
    seed: int


@dataclass
class FeatureExtractor:
    profile: ExtractorProfile
    # One (conv_a, conv_b) kernel pair per stage; conv_a keeps the channel
    # count, conv_b widens (and downsamples from stage 2 on).
    stages: tuple[tuple[Tensor, Tensor], ...]

    @property
    def channels(self) -> tuple[int, int, int, int]:
        return self.profile.channels


@dataclass
class FeaturePyramid:
    levels: tuple[Tensor, Tensor, Tensor, Tensor]

    def __getitem__(self, i: int) -> Tensor:
        return self.levels[i]

    def __len__(self) -> int:
        return 4


def resolve_profile(profile: str | ExtractorProfile,
                    seed: int = 0) -> ExtractorProfile:
    if isinstance(profile, ExtractorProfile):
        return profile
    if profile not in PROFILES:
        raise ValueError(
            f"unknown profile {profile!r}, expected one of {sorted(PROFILES)}")
    return ExtractorProfile(profile, PROFILES[profile], seed)


def build_extractor(profile: str | ExtractorProfile = "desk", seed: int = 0,
                    dtype=np.float32) -> FeatureExtractor:
    """Materialize the frozen kernels for a profile; same seed, same bits."""
    prof = resolve_profile(profile, seed)
    rng = np.random.default_rng(prof.seed)
    stages = []
    c_in = 3
    for c_out in prof.channels:
        stages.append((_uniform_kernel(rng, c_in, c_in, dtype),
                       _uniform_kernel(rng, c_out, c_in, dtype)))
        c_in = c_out
    return FeatureExtractor(prof, tuple(stages))


def _uniform_kernel(rng: np.random.Generator, c_out: int, c_in: int,
                    dtype) -> Tensor:
    # Variance-preserving bound for relu chains; a plain 1/sqrt(fan-in)
    # scale shrinks activations roughly 3x per conv, leaving the deep
    # pyramid levels orders of magnitude quieter than level 1.
    bound = np.sqrt(6.0 / (c_in * 9))
    k = rng.uniform(-bound, bound, size=(c_out, c_in, 3, 3)).astype(dtype)
    return Tensor(k)


def extract(extractor: FeatureExtractor,
            images: Tensor | np.ndarray) -> FeaturePyramid:
    """Run a (B, 3, H, W) batch through all four stages.

    H and W must be divisible by 8 so every level has integral size.
    Plain arrays stay off the tape; pass a Tensor to differentiate through
    the extraction (the kernels themselves never receive gradients).
    """
    x = images if isinstance(images, Tensor) else Tensor(images)
    if x.data.ndim != 4 or x.data.shape[1] != 3:
        raise ValueError(f"expected (B, 3, H, W) images, got {x.data.shape}")
    h, w = x.data.shape[2], x.data.shape[3]
    if h % 8 or w % 8:
        raise ValueError(
            f"image size {h}x{w} must be divisible by 8; resize first")
    levels = []
    for idx, (conv_a, conv_b) in enumerate(extractor.stages):
        x = relu(conv2d(x, conv_a, stride=1, pad=1))
        x = relu(conv2d(x, conv_b, stride=1 if idx == 0 else 2, pad=1))
        levels.append(x)
    return FeaturePyramid(tuple(levels))
