"""Weight-predictor network: feature pyramids in, basis weights out.

Per pyramid level a splatting block runs content and style features through
a shared pair of 3x3 convs with tanh, then aligns the content path to the
style path's per-channel statistics.  The four fused maps are pooled to
vectors, concatenated, and pushed through a stack of 1x1 convs and a linear
head that emits one weight per basis table.  The weighted bank reconstructs
a dense lattice that stylizes the image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .clut import (BasisBank, Clut, TransformMatrices, combine_basis,
                   combine_basis_backward, init_bank, reconstruct,
                   reconstruct_backward, reconstruct_residual)
from .features import FeatureExtractor, FeaturePyramid, build_extractor, extract
from .lut3d import Image, Lut3D, apply_image, make_identity

# Width of the splat output (and unit of the classifier widths) per profile.
C_MID = {"desk": 64, "paper": 256}


@dataclass
class SplattingBlock:
    conv_a: Tensor  # (c_in, c_in, 3, 3)
    conv_b: Tensor  # (c_mid, c_in, 3, 3)


@dataclass
class Classifier:
    convs: tuple[Tensor, Tensor, Tensor, Tensor]  # 1x1 kernels
    head: Tensor  # (8 * c_mid, n_basis)


@dataclass
class NlutModel:
    extractor: FeatureExtractor
    blocks: tuple[SplattingBlock, ...]
    classifier: Classifier
    bank_psi: Tensor  # (N, 3, S, W)
    m_s: Tensor  # (D, S)
    m_w: Tensor  # (W, D^2)
    dim: int
    c_mid: int

    @property
    def n_basis(self) -> int:
        return self.bank_psi.data.shape[0]

    def basis_bank(self) -> BasisBank:
        psis = self.bank_psi.data
        s, w = psis.shape[2], psis.shape[3]
        return BasisBank(psis.shape[0],
                         tuple(Clut(s, w, p.copy()) for p in psis))

    def matrices(self) -> TransformMatrices:
        return TransformMatrices(self.m_s.data.copy(), self.m_w.data.copy())

    def parameters(self) -> dict[str, Tensor]:
        """All trainable tensors keyed by a stable name."""
        params: dict[str, Tensor] = {}
        for i, blk in enumerate(self.blocks, start=1):
            params[f"splat{i}.conv_a"] = blk.conv_a
            params[f"splat{i}.conv_b"] = blk.conv_b
        for i, conv in enumerate(self.classifier.convs, start=1):
            params[f"clf.conv{i}"] = conv
        params["clf.head"] = self.classifier.head
        params["bank.psi"] = self.bank_psi
        params["m_s"] = self.m_s
        params["m_w"] = self.m_w
        return params


def init_model(profile: str = "desk", n_basis: int = 20, dim: int = 33,
               s: int = 32, w: int = 32, seed: int = 0, feature_seed: int = 0,
               dtype=np.float32) -> NlutModel:
    """Fresh model: frozen extractor plus seeded trainable parameters."""
    extractor = build_extractor(profile, feature_seed, dtype=dtype)
    c_mid = C_MID[extractor.profile.name]
    rng = np.random.default_rng(seed)

    def kernel(c_out: int, c_in: int, ksz: int) -> Tensor:
        bound = 1.0 / np.sqrt(c_in * ksz * ksz)
        k = rng.uniform(-bound, bound,
                        size=(c_out, c_in, ksz, ksz)).astype(dtype)
        return Tensor(k, requires_grad=True)

    blocks = tuple(
        SplattingBlock(conv_a=kernel(c, c, 3), conv_b=kernel(c_mid, c, 3))
        for c in extractor.channels)
    widths = (4 * c_mid, 2 * c_mid, 4 * c_mid, 2 * c_mid, 8 * c_mid)
    convs = tuple(kernel(widths[i + 1], widths[i], 1) for i in range(4))
    hb = 1.0 / np.sqrt(8 * c_mid)
    head = Tensor(rng.uniform(-hb, hb,
                              size=(8 * c_mid, n_basis)).astype(dtype),
                  requires_grad=True)
    bank, mats = init_bank(n_basis, s, w, dim,
                           seed=int(rng.integers(1 << 31)), dtype=dtype)
    return NlutModel(
        extractor=extractor,
        blocks=blocks,
        classifier=Classifier(convs, head),
        bank_psi=Tensor(bank.stacked(), requires_grad=True),
        m_s=Tensor(mats.m_s, requires_grad=True),
        m_w=Tensor(mats.m_w, requires_grad=True),
        dim=dim,
        c_mid=c_mid)


def adain(x: Tensor, y: Tensor, eps: float = 1e-5) -> Tensor:
    """Shift x's per-channel statistics onto y's.

    Equivalent to (x - mu(x)) / std(x) * std(y) + mu(y) with the biased,
    eps-stabilized std, but fused into one graph node with an analytic
    backward.  A style batch of one broadcasts its statistics over the
    whole content batch.
    """
    xd, yd = x.data, y.data
    if xd.ndim != 4 or yd.ndim != 4 or xd.shape[1] != yd.shape[1]:
        raise ValueError(
            f"adain needs (B, C, H, W) inputs with equal C, got "
            f"{xd.shape} and {yd.shape}")
    n_x = xd.shape[2] * xd.shape[3]
    n_y = yd.shape[2] * yd.shape[3]
    mu_x = xd.mean(axis=(2, 3), keepdims=True)
    cx = xd - mu_x
    sx = np.sqrt(np.mean(cx * cx, axis=(2, 3), keepdims=True) + eps)
    mu_y = yd.mean(axis=(2, 3), keepdims=True)
    cy = yd - mu_y
    sy = np.sqrt(np.mean(cy * cy, axis=(2, 3), keepdims=True) + eps)
    r = sy / sx
    out = cx * r
    out += mu_y

    def back(g):
        gr_sum = np.sum(g * cx, axis=(2, 3), keepdims=True)
        if x.requires_grad:
            g_mean = g.mean(axis=(2, 3), keepdims=True)
            dvar_x = -gr_sum * sy / (sx * sx) / (2.0 * sx)
            gx = r * (g - g_mean)
            gx += cx * (2.0 / n_x * dvar_x)
            ad._accum(x, gx, owned=True)
        if y.requires_grad:
            dsy = gr_sum / sx
            dmu_y = g.sum(axis=(2, 3), keepdims=True)
            if yd.shape[0] == 1 and xd.shape[0] > 1:
                dsy = dsy.sum(axis=0, keepdims=True)
                dmu_y = dmu_y.sum(axis=0, keepdims=True)
            gy = cy * (dsy / sy / n_y)
            gy += dmu_y / n_y
            ad._accum(y, gy, owned=True)
    return Tensor.from_op(out, (x, y), back, "adain")


def splat(block: SplattingBlock, f_c: Tensor, f_s: Tensor,
          content_grad: bool = True) -> Tensor:
    """Fuse one pyramid level: shared convs on both paths, then adain.

    With content_grad=False the content path is computed but detached.
    The global pooling that follows in the predictor reads only the
    output's spatial mean, which equals the style path's mean exactly, so
    the content branch's true gradient is identically zero there and its
    backward sweep can be skipped without changing any update.
    """
    def path(f: Tensor) -> Tensor:
        h = ad.tanh(ad.conv2d(f, block.conv_a, stride=1, pad=1))
        return ad.tanh(ad.conv2d(h, block.conv_b, stride=1, pad=1))
    c_path = path(f_c)
    if not content_grad:
        c_path = Tensor(c_path.data)
    return adain(c_path, path(f_s))


def predict_from_pyramids(model: NlutModel, content: FeaturePyramid,
                          style: FeaturePyramid) -> Tensor:
    """Weights (B, N) from already-extracted pyramids."""
    pooled = [ad.adaptive_avg_pool(
        splat(model.blocks[j], content[j], style[j], content_grad=False))
        for j in range(4)]
    x = ad.concat(pooled, axis=1)
    for i, conv in enumerate(model.classifier.convs):
        x = ad.conv2d(x, conv)
        if i < 3:
            x = ad.tanh(x)
    flat = ad.reshape(x, (x.shape[0], x.shape[1]))
    return ad.matmul(flat, model.classifier.head)


def predict_weights(model: NlutModel, content: Image,
                    style: Image) -> np.ndarray:
    """Basis weights (N,) for one content/style pair, detached."""
    pc = extract(model.extractor, content.planes[None].astype(
        model.bank_psi.data.dtype))
    ps = extract(model.extractor, style.planes[None].astype(
        model.bank_psi.data.dtype))
    return predict_from_pyramids(model, pc, ps).data[0].copy()


def entries_from_weights(model: NlutModel, weights: Tensor) -> Tensor:
    """Differentiable per-sample lattice entries (B, 3, D, D, D).

    Forward delegates to the compressed-table reconstruction; backward
    routes gradients to the weights, the bank, and both matrices.
    """
    dim = model.dim
    psis = model.bank_psi.data
    w_data = weights.data
    bsz = w_data.shape[0]
    mats = TransformMatrices(model.m_s.data, model.m_w.data)
    s, wd = psis.shape[2], psis.shape[3]
    bank = BasisBank(psis.shape[0], tuple(Clut(s, wd, p) for p in psis))
    combined = [combine_basis(bank, w_data[b]) for b in range(bsz)]
    # Raw arrays, not Lut3D objects: mid-training lattices may be transient
    # garbage (even non-finite) and only the loss check should judge them.
    ident = make_identity(dim, dtype=psis.dtype).entries
    out = np.empty((bsz, 3, dim, dim, dim), dtype=psis.dtype)
    for b in range(bsz):
        out[b] = ident + reconstruct_residual(combined[b], mats, dim)

    def back(g):
        d_w = np.zeros_like(w_data)
        d_psis = np.zeros_like(psis)
        d_m_s = np.zeros_like(mats.m_s)
        d_m_w = np.zeros_like(mats.m_w)
        for b in range(bsz):
            d_psi_b, d_ms_b, d_mw_b = reconstruct_backward(
                combined[b], mats, dim, g[b])
            d_wb, d_bases = combine_basis_backward(bank, w_data[b], d_psi_b)
            d_w[b] = d_wb
            d_psis += d_bases
            d_m_s += d_ms_b
            d_m_w += d_mw_b
        ad._accum(weights, d_w)
        ad._accum(model.bank_psi, d_psis)
        ad._accum(model.m_s, d_m_s)
        ad._accum(model.m_w, d_m_w)
    return Tensor.from_op(
        out, (weights, model.bank_psi, model.m_s, model.m_w), back,
        "entries_from_weights")


def lut_from_weights(model: NlutModel, weights: np.ndarray) -> Lut3D:
    """Dense lattice for one weight vector, off the tape."""
    return reconstruct(combine_basis(model.basis_bank(), weights),
                       model.matrices(), model.dim)


def forward_stylize(model: NlutModel, content: Image, style: Image,
                    resize: tuple[int, int] = (256, 256),
                    workers: int = 1) -> tuple[Image, Lut3D]:
    """Stylize one frame: predict at reduced size, apply at full size.

    Returns the stylized image and the lattice that produced it; applying
    that lattice to the content again reproduces the image bit for bit.
    """
    from .video import resize_bilinear

    small_c = resize_bilinear(content, resize[0], resize[1])
    small_s = resize_bilinear(style, resize[0], resize[1])
    weights = predict_weights(model, small_c, small_s)
    lut = lut_from_weights(model, weights)
    return apply_image(lut, content, workers=workers), lut
