"""Optimization loops and checkpoints.

Two stages share one iteration shape: sample a content/style batch, predict
basis weights, reconstruct per-sample lattices, stylize the content through
them, re-extract features, and descend the combined loss. Pretraining draws
random pairs from an image corpus to teach the predictor a broad mapping;
fine-tuning locks onto one clip's keyframes and one style to specialize it.

Batches are deduplicated before any heavy work: repeated (content, style)
pairs or byte-identical crops collapse to one sample carrying a multiplicity
weight, which leaves the objective unchanged while skipping redundant
forward passes.

Checkpoints are single self-describing files: a magic tag, a version, a
JSON manifest of hyperparameters and array layouts, then the raw array
bytes. Loading rebuilds the full model without consulting anything else.
"""

from __future__ import annotations

import json
import os
import tempfile
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward
from .errors import CheckpointError
from .features import extract
from .losses import (LossLog, LossReport, LossWeights, content_loss,
                     mono_reg, smooth_reg, style_loss, total_loss)
from .lut3d import Image, Lut3D
from .network import (NlutModel, entries_from_weights, init_model,
                      lut_from_weights, predict_from_pyramids)

CKPT_MAGIC = b"NLUTCKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both stages; the CLI mirrors these defaults."""

    profile: str = "desk"
    dim: int = 33
    n_basis: int = 20
    basis_s: int = 32
    basis_w: int = 32
    seed: int = 0
    feature_seed: int = 0
    lr: float = 1e-4
    finetune_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    resize: tuple[int, int] = (256, 256)
    iterations: int = 2000
    batch: int = 6
    finetune_iterations: int = 20
    finetune_batch: int = 8
    update_basis: bool = True
    update_matrices: bool = True
    workers: int = 1
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        w, h = self.resize
        if w % 8 or h % 8:
            raise ValueError(f"resize {self.resize} must be divisible by 8")
        if self.iterations < 0 or self.finetune_iterations < 0:
            raise ValueError("iteration counts cannot be negative")
        if self.batch < 1 or self.finetune_batch < 1:
            raise ValueError("batch sizes must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


class AdamState:
    """First and second moment estimates plus the step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0


def clip_gradients(params: dict[str, Tensor], max_norm: float = 5.0) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the norm before clipping. Accumulates the squared norm in
    float64 so the result does not depend on parameter order rounding.
    """
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.square(p.grad, dtype=np.float64).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= p.grad.dtype.type(factor)
    return norm


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected update; parameters with no gradient are skipped."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _stream(seed: int, tag: int) -> np.random.Generator:
    """Independent deterministic RNG stream for one purpose."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(tag,)))


def _dedupe_pairs(pairs: Sequence[tuple[int, int]]):
    """Unique pairs in first-seen order with their multiplicities."""
    counts: dict[tuple[int, int], int] = {}
    order: list[tuple[int, int]] = []
    for p in pairs:
        if p in counts:
            counts[p] += 1
        else:
            counts[p] = 1
            order.append(p)
    return order, [float(counts[p]) for p in order]


def _dedupe_arrays(arrays: Sequence[np.ndarray]):
    """Byte-identical arrays collapse to one sample with a weight."""
    counts: dict[bytes, int] = {}
    order: list[np.ndarray] = []
    for a in arrays:
        key = a.tobytes()
        if key in counts:
            counts[key] += 1
        else:
            counts[key] = 1
            order.append(a)
    return order, [float(counts[a.tobytes()]) for a in order]


def _trainable(model: NlutModel, update_basis: bool,
               update_matrices: bool) -> dict[str, Tensor]:
    params = model.parameters()
    if not update_basis:
        params.pop("bank.psi")
    if not update_matrices:
        params.pop("m_s")
        params.pop("m_w")
    return params


def _stack_levels(pyramids: Sequence[Sequence[np.ndarray]]) -> list[Tensor]:
    """Batch per-image cached pyramid levels into constant tensors."""
    return [Tensor(np.concatenate([p[j] for p in pyramids], axis=0))
            for j in range(4)]


def _train_step(model: NlutModel, trainable: dict[str, Tensor],
                adam: AdamState, content_batch: np.ndarray,
                content_pyr: Sequence[Tensor], style_pyr: Sequence[Tensor],
                sample_weights, config: TrainConfig) -> LossReport:
    """One descent step on a prepared batch; returns the loss report."""
    w = predict_from_pyramids(model, content_pyr, style_pyr)
    entries = entries_from_weights(model, w)
    stylized = ad.lut_apply(entries, content_batch, workers=config.workers)
    f_sed = extract(model.extractor, stylized)
    total, report = total_loss(
        style_loss(f_sed, style_pyr, sample_weights),
        content_loss(f_sed[3], content_pyr[3], sample_weights),
        smooth_reg(entries, sample_weights),
        mono_reg(entries, sample_weights),
        config.weights)
    backward(total)
    clip_gradients(trainable, config.clip_norm)
    adam_step(trainable, adam, lr=config.lr, beta1=config.beta1,
              beta2=config.beta2, eps=config.eps)
    ad.zero_grads(model.parameters().values())
    return report


_IMAGE_SUFFIXES = {".png", ".ppm", ".pnm", ".jpg", ".jpeg", ".bmp"}


def load_corpus(corpus_dir, resize: tuple[int, int]) -> list[np.ndarray]:
    """Decodable corpus images resized to the training size, sorted by name.

    Files that fail to decode are skipped with a warning; fewer than two
    usable images is an error.
    """
    from .video import load_image, resize_bilinear

    root = Path(corpus_dir)
    if not root.is_dir():
        raise ValueError(f"corpus directory not found: {root}")
    paths = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in _IMAGE_SUFFIXES)
    out = []
    for p in paths:
        try:
            img = load_image(str(p))
        except Exception as exc:
            warnings.warn(f"skipping undecodable corpus file {p.name}: {exc}")
            continue
        out.append(resize_bilinear(img, resize[0], resize[1]).planes)
    if len(out) < 2:
        raise ValueError(f"corpus needs at least 2 decodable images, "
                         f"found {len(out)} in {root}")
    return out


def pretrain(corpus_dir, config: TrainConfig = TrainConfig(), *,
             log_path=None,
             progress: Callable[[int, LossReport], None] | None = None
             ) -> NlutModel:
    """Train a fresh model on random content/style pairs from a corpus."""
    images = load_corpus(corpus_dir, config.resize)
    model = init_model(config.profile, n_basis=config.n_basis,
                       dim=config.dim, s=config.basis_s, w=config.basis_w,
                       seed=config.seed, feature_seed=config.feature_seed)
    pyramids = [[lvl.data for lvl in extract(model.extractor, img[None])]
                for img in images]
    trainable = _trainable(model, config.update_basis, config.update_matrices)
    adam = AdamState(trainable)
    sampler = _stream(config.seed, 1)
    log = LossLog(log_path) if log_path is not None else None
    try:
        for it in range(config.iterations):
            ci = sampler.integers(0, len(images), size=config.batch)
            si = sampler.integers(0, len(images), size=config.batch)
            pairs, weights = _dedupe_pairs(list(zip(ci.tolist(), si.tolist())))
            batch = np.stack([images[c] for c, _ in pairs])
            content_pyr = _stack_levels([pyramids[c] for c, _ in pairs])
            style_pyr = _stack_levels([pyramids[s] for _, s in pairs])
            report = _train_step(model, trainable, adam, batch, content_pyr,
                                 style_pyr, weights, config)
            if log is not None:
                log.append(it, report)
            if progress is not None:
                progress(it, report)
    finally:
        if log is not None:
            log.close()
    return model


def _prepare_slots(frames: Sequence[Image], batch: int,
                   resize: tuple[int, int], crop_rng: np.random.Generator):
    """Content arrays for one fine-tune iteration, before deduplication.

    Slot b shows keyframe b mod count. The first slot of each frame is the
    whole frame resized; repeat slots take random crops at the training
    size when the frame is large enough, so small or exactly-sized frames
    collapse into duplicates.
    """
    from .video import resize_bilinear

    rw, rh = resize
    count = len(frames)
    resized = {}
    slots = []
    for b in range(batch):
        fi = b % count
        frame = frames[fi]
        if b < count or frame.width < rw or frame.height < rh:
            if fi not in resized:
                resized[fi] = (frame.planes if (frame.width, frame.height)
                               == (rw, rh)
                               else resize_bilinear(frame, rw, rh).planes)
            slots.append(resized[fi])
        else:
            top = int(crop_rng.integers(0, frame.height - rh + 1))
            left = int(crop_rng.integers(0, frame.width - rw + 1))
            slots.append(np.ascontiguousarray(
                frame.planes[:, top:top + rh, left:left + rw]))
    return slots


def finetune(model: NlutModel, frames: Sequence[Image], style: Image,
             config: TrainConfig = TrainConfig(), *,
             iterations: int | None = None, batch: int | None = None,
             direct_weights: bool = False,
             update_basis: bool | None = None,
             update_matrices: bool | None = None,
             log_path=None,
             progress: Callable[[int, LossReport], None] | None = None
             ) -> Lut3D:
    """Specialize a pretrained model to one clip and style; returns the LUT.

    With iterations=0 this is the zero-shot path: predict once from the
    first keyframe and return that lattice untouched. With direct_weights
    the network stays frozen and the basis weight vector itself descends,
    seeded from one predictor pass.

    The transform matrices stay frozen here unless update_matrices is
    explicitly True; the basis updates by default, following the config.
    Steps use config.finetune_lr, not the pretraining lr.
    """
    from .video import resize_bilinear

    if len(frames) == 0:
        raise ValueError("finetune needs at least one keyframe")
    config = replace(config, lr=config.finetune_lr)
    iterations = config.finetune_iterations if iterations is None else iterations
    batch = config.finetune_batch if batch is None else batch
    if iterations < 0 or batch < 1:
        raise ValueError("iterations must be >= 0 and batch >= 1")
    update_basis = config.update_basis if update_basis is None else update_basis
    update_matrices = False if update_matrices is None else update_matrices

    rw, rh = config.resize
    key0 = resize_bilinear(frames[0], rw, rh)
    style_small = resize_bilinear(style, rw, rh)
    style_pyr = [Tensor(lvl.data) for lvl in
                 extract(model.extractor, style_small.planes[None])]

    def predict_key0() -> np.ndarray:
        pc = extract(model.extractor, key0.planes[None])
        return predict_from_pyramids(model, pc, style_pyr).data[0].copy()

    if iterations == 0:
        return lut_from_weights(model, predict_key0())

    if direct_weights:
        w_free = Tensor(predict_key0()[None].copy(), requires_grad=True)
        trainable = {"weights": w_free}
    else:
        trainable = _trainable(model, update_basis, update_matrices)
    adam = AdamState(trainable)
    crop_rng = _stream(config.seed, 2)
    log = LossLog(log_path) if log_path is not None else None
    memo_key, memo_pyr = None, None
    try:
        for it in range(iterations):
            slots = _prepare_slots(frames, batch, config.resize, crop_rng)
            uniques, weights = _dedupe_arrays(slots)
            content_batch = np.stack(uniques)
            key = content_batch.tobytes()
            if key == memo_key:
                content_pyr = memo_pyr
            else:
                content_pyr = [Tensor(lvl.data) for lvl in
                               extract(model.extractor, content_batch)]
                memo_key, memo_pyr = key, content_pyr
            if direct_weights:
                entries = entries_from_weights(model, w_free)
                stylized = ad.lut_apply(entries, content_batch[:1],
                                        workers=config.workers)
                f_sed = extract(model.extractor, stylized)
                total, report = total_loss(
                    style_loss(f_sed, style_pyr),
                    content_loss(f_sed[3],
                                 Tensor(content_pyr[3].data[:1])),
                    smooth_reg(entries),
                    mono_reg(entries),
                    config.weights)
                backward(total)
                clip_gradients(trainable, config.clip_norm)
                adam_step(trainable, adam, lr=config.lr, beta1=config.beta1,
                          beta2=config.beta2, eps=config.eps)
                ad.zero_grads(model.parameters().values())
                w_free.grad = None
            else:
                report = _train_step(model, trainable, adam, content_batch,
                                     content_pyr, style_pyr, weights, config)
            if log is not None:
                log.append(it, report)
            if progress is not None:
                progress(it, report)
    finally:
        if log is not None:
            log.close()
    if direct_weights:
        return lut_from_weights(model, w_free.data[0])
    return lut_from_weights(model, predict_key0())


def _model_arrays(model: NlutModel) -> dict[str, Tensor]:
    """Every array a checkpoint must carry, frozen extractor included."""
    arrays: dict[str, Tensor] = {}
    for j, (conv_a, conv_b) in enumerate(model.extractor.stages, start=1):
        arrays[f"feat{j}.conv_a"] = conv_a
        arrays[f"feat{j}.conv_b"] = conv_b
    arrays.update(model.parameters())
    return arrays


def save_checkpoint(path, model: NlutModel, config: TrainConfig,
                    stage: str) -> None:
    """Write a self-describing checkpoint atomically."""
    arrays = _model_arrays(model)
    manifest = {
        "stage": stage,
        "config": asdict(config),
        "arrays": [{"name": k, "shape": list(t.data.shape),
                    "dtype": str(t.data.dtype)} for k, t in arrays.items()],
    }
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."),
                               prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(CKPT_MAGIC)
            f.write(np.uint32(CKPT_VERSION).tobytes())
            f.write(np.uint32(len(header)).tobytes())
            f.write(header)
            for t in arrays.values():
                data = np.ascontiguousarray(t.data)
                if data.dtype.byteorder == ">":
                    data = data.astype(data.dtype.newbyteorder("<"))
                f.write(data.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _config_from_manifest(raw: dict) -> TrainConfig:
    # Missing keys take the dataclass defaults, so checkpoints written
    # before a config field existed keep loading.
    raw = dict(raw)
    if "resize" in raw:
        raw["resize"] = tuple(raw["resize"])
    if "weights" in raw:
        raw["weights"] = LossWeights(**raw["weights"])
    try:
        return TrainConfig(**raw)
    except TypeError as exc:
        raise CheckpointError(f"checkpoint config is invalid: {exc}")


def load_checkpoint(path, profile: str | None = None
                    ) -> tuple[NlutModel, TrainConfig, str]:
    """Rebuild a model from a checkpoint file.

    The file's recorded profile always wins; a different requested profile
    only produces a warning.
    """
    blob = Path(path).read_bytes()
    if len(blob) < len(CKPT_MAGIC) + 8 or not blob.startswith(CKPT_MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint file")
    off = len(CKPT_MAGIC)
    version = int(np.frombuffer(blob, np.uint32, 1, off)[0])
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    hlen = int(np.frombuffer(blob, np.uint32, 1, off + 4)[0])
    off += 8
    if off + hlen > len(blob):
        raise CheckpointError("checkpoint truncated in the manifest")
    try:
        manifest = json.loads(blob[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"checkpoint manifest is unreadable: {exc}")
    off += hlen

    config = _config_from_manifest(manifest["config"])
    if profile is not None and profile != config.profile:
        warnings.warn(f"checkpoint was trained with profile "
                      f"'{config.profile}'; ignoring requested '{profile}'")
    model = init_model(config.profile, n_basis=config.n_basis,
                       dim=config.dim, s=config.basis_s, w=config.basis_w,
                       seed=config.seed, feature_seed=config.feature_seed)
    targets = _model_arrays(model)
    for rec in manifest["arrays"]:
        name = rec["name"]
        if name not in targets:
            raise CheckpointError(f"checkpoint has unknown array '{name}'")
        shape = tuple(rec["shape"])
        dtype = np.dtype(rec["dtype"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if off + nbytes > len(blob):
            raise CheckpointError(f"checkpoint truncated in array '{name}'")
        arr = np.frombuffer(blob, dtype, count=nbytes // dtype.itemsize,
                            offset=off).reshape(shape)
        off += nbytes
        target = targets[name]
        if target.data.shape != shape:
            raise CheckpointError(
                f"array '{name}' has shape {shape}, expected "
                f"{target.data.shape}")
        target.data[...] = arr
    if off != len(blob):
        raise CheckpointError(
            f"checkpoint has {len(blob) - off} unexpected trailing bytes")
    return model, config, str(manifest["stage"])
