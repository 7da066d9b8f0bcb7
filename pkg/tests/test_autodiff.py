"""Every differentiable op against central finite differences (float64)."""

from __future__ import annotations

import numpy as np
import pytest

import nlut.autodiff as ad
from nlut.autodiff import Tensor, backward
from nlut.errors import NumericError

from oracles import conv2d_ref, grad_close, numeric_grad

H = 1e-4


def leaf(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def check(build, *leaves):
    """Compare tape gradients of a scalar graph against finite differences."""
    loss = build()
    backward(loss)
    for t in leaves:
        analytic = t.grad.copy()
        numeric = numeric_grad(lambda: build().item(), t.data, H)
        assert grad_close(analytic, numeric), \
            f"gradient mismatch for leaf {t.data.shape}"


def weighted_sum(t: Tensor, rng) -> Tensor:
    w = Tensor(rng.standard_normal(t.data.shape))
    return ad.tsum(ad.mul(t, w))


class TestElementwiseGrads:
    def test_add_sub_mul_div(self, rng):
        a = leaf(rng, 3, 4)
        b = leaf(rng, 3, 4)
        b.data += 3.0  # keep divisors away from zero
        w = rng.standard_normal((3, 4))
        for op in (ad.add, ad.sub, ad.mul, ad.div):
            a.grad = b.grad = None
            check(lambda: ad.tsum(ad.mul(op(a, b), Tensor(w))), a, b)

    def test_broadcasting_binary_ops(self, rng):
        a = leaf(rng, 2, 3, 4)
        b = leaf(rng, 1, 3, 1)
        b.data += 2.5
        w = rng.standard_normal((2, 3, 4))
        for op in (ad.add, ad.sub, ad.mul, ad.div):
            a.grad = b.grad = None
            check(lambda: ad.tsum(ad.mul(op(a, b), Tensor(w))), a, b)

    def test_style_stat_broadcast_shape(self, rng):
        # (1, C, 1, 1) stats broadcast over a (B, C, H, W) map and the
        # gradient sums back over batch and space.
        x = leaf(rng, 3, 2, 4, 4)
        s = leaf(rng, 1, 2, 1, 1)
        check(lambda: ad.tsum(ad.mul(x, s)), x, s)

    def test_scale_and_neg(self, rng):
        a = leaf(rng, 5)
        check(lambda: ad.tsum(ad.scale(a, -2.5)), a)
        assert np.allclose((-a).data, -a.data)

    def test_tanh(self, rng):
        a = leaf(rng, 4, 3)
        check(lambda: weighted_sum(ad.tanh(a), np.random.default_rng(0)), a)

    def test_tanh_on_zero_dim_tensor(self):
        x = Tensor(np.array(0.7), requires_grad=True)
        backward(ad.tsum(ad.tanh(x)))
        assert np.allclose(x.grad, 1 - np.tanh(0.7) ** 2)

    def test_relu_away_from_kink(self, rng):
        a = leaf(rng, 6, 6)
        a.data[np.abs(a.data) < 0.05] += 0.1
        check(lambda: weighted_sum(ad.relu(a), np.random.default_rng(1)), a)

    def test_sqrt_positive(self, rng):
        a = leaf(rng, 10)
        a.data = np.abs(a.data) + 0.5
        check(lambda: weighted_sum(ad.sqrt(a), np.random.default_rng(2)), a)

    def test_sqrt_at_zero_uses_zero_subgradient(self):
        a = Tensor(np.zeros(3), requires_grad=True)
        out = ad.tsum(ad.sqrt(a))
        backward(out)
        assert np.array_equal(a.grad, np.zeros(3))

    def test_square(self, rng):
        a = leaf(rng, 3, 3)
        check(lambda: weighted_sum(ad.square(a), np.random.default_rng(3)), a)


class TestReductionAndShapeGrads:
    def test_sum_variants(self, rng):
        a = leaf(rng, 2, 3, 4)
        w0 = rng.standard_normal((3, 4))
        check(lambda: ad.tsum(ad.mul(ad.tsum(a, axis=0), Tensor(w0))), a)
        a.grad = None
        w1 = rng.standard_normal((2, 1, 4))
        check(lambda: ad.tsum(ad.mul(ad.tsum(a, axis=1, keepdims=True),
                                     Tensor(w1))), a)

    def test_mean_variants(self, rng):
        a = leaf(rng, 2, 5)
        check(lambda: ad.tmean(a), a)
        a.grad = None
        w = rng.standard_normal((2, 1))
        check(lambda: ad.tsum(ad.mul(ad.tmean(a, axis=1, keepdims=True),
                                     Tensor(w))), a)

    def test_reshape(self, rng):
        a = leaf(rng, 2, 6)
        w = rng.standard_normal((3, 4))
        check(lambda: ad.tsum(ad.mul(ad.reshape(a, (3, 4)), Tensor(w))), a)

    def test_concat(self, rng):
        a = leaf(rng, 2, 3)
        b = leaf(rng, 2, 5)
        w = rng.standard_normal((2, 8))
        check(lambda: ad.tsum(ad.mul(ad.concat([a, b], axis=1),
                                     Tensor(w))), a, b)

    def test_matmul(self, rng):
        a = leaf(rng, 3, 4)
        b = leaf(rng, 4, 2)
        w = rng.standard_normal((3, 2))
        check(lambda: ad.tsum(ad.mul(ad.matmul(a, b), Tensor(w))), a, b)


class TestSpatialGrads:
    def test_adaptive_avg_pool(self, rng):
        a = leaf(rng, 2, 3, 4, 5)
        w = rng.standard_normal((2, 3, 1, 1))
        out = ad.adaptive_avg_pool(a)
        assert out.shape == (2, 3, 1, 1)
        check(lambda: ad.tsum(ad.mul(ad.adaptive_avg_pool(a), Tensor(w))), a)

    def test_channel_mean(self, rng):
        a = leaf(rng, 2, 3, 4, 4)
        w = rng.standard_normal((2, 3, 1, 1))
        check(lambda: ad.tsum(ad.mul(ad.channel_mean(a), Tensor(w))), a)

    def test_channel_std_value_and_grad(self, rng):
        a = leaf(rng, 2, 3, 5, 5)
        got = ad.channel_std(a).data
        want = np.sqrt(a.data.var(axis=(2, 3), keepdims=True) + 1e-5)
        assert np.allclose(got, want, atol=1e-12)
        w = rng.standard_normal((2, 3, 1, 1))
        check(lambda: ad.tsum(ad.mul(ad.channel_std(a), Tensor(w))), a)

    def test_channel_std_constant_input(self):
        a = Tensor(np.full((1, 2, 3, 3), 0.7), requires_grad=True)
        out = ad.channel_std(a)
        assert np.allclose(out.data, np.sqrt(1e-5))
        backward(ad.tsum(out))
        assert np.all(np.isfinite(a.grad))


class TestConv2dGrads:
    @pytest.mark.parametrize("stride,pad,ksz", [(1, 1, 3), (2, 1, 3), (1, 0, 1)])
    def test_forward_matches_oracle(self, rng, stride, pad, ksz):
        x = rng.standard_normal((2, 3, 6, 6))
        k = rng.standard_normal((4, 3, ksz, ksz))
        got = ad.conv2d(Tensor(x), Tensor(k), stride=stride, pad=pad).data
        want = conv2d_ref(x, k, stride=stride, pad=pad)
        assert np.allclose(got, want, atol=1e-10)

    @pytest.mark.parametrize("stride,pad,ksz", [(1, 1, 3), (2, 1, 3), (1, 0, 1)])
    def test_grads_match_finite_differences(self, rng, stride, pad, ksz):
        x = leaf(rng, 2, 3, 6, 6)
        k = leaf(rng, 4, 3, ksz, ksz)
        wr = np.random.default_rng(7)

        def build():
            out = ad.conv2d(x, k, stride=stride, pad=pad)
            w = Tensor(wr.standard_normal(out.data.shape)) \
                if not hasattr(build, "w") else build.w
            build.w = w
            return ad.tsum(ad.mul(out, w))

        check(build, x, k)

    def test_channel_mismatch_raises(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 4, 4)))
        k = Tensor(rng.standard_normal((2, 4, 3, 3)))
        with pytest.raises(ValueError, match="channels"):
            ad.conv2d(x, k, pad=1)

    def test_frozen_kernel_gets_no_gradient(self, rng):
        x = leaf(rng, 1, 2, 4, 4)
        k = Tensor(rng.standard_normal((2, 2, 3, 3)))  # no grad requested
        backward(ad.tsum(ad.conv2d(x, k, pad=1)))
        assert k.grad is None
        assert x.grad is not None


class TestLutApplyNode:
    def test_grads_match_finite_differences(self, rng):
        dim = 3
        e = Tensor(rng.uniform(0, 1, (2, 3, dim, dim, dim)), requires_grad=True)
        imgs = rng.uniform(0.05, 0.95, (2, 3, 4, 5))
        w = rng.standard_normal((2, 3, 4, 5))

        def build():
            return ad.tsum(ad.mul(ad.lut_apply(e, imgs), Tensor(w)))

        check(build, e)

    def test_no_gradient_to_pixels(self, rng):
        e = Tensor(rng.uniform(0, 1, (1, 3, 2, 2, 2)), requires_grad=True)
        imgs = rng.uniform(0, 1, (1, 3, 3, 3))
        out = ad.lut_apply(e, imgs)
        assert out.parents == (e,)

    def test_shape_validation(self, rng):
        e = Tensor(rng.uniform(0, 1, (2, 3, 2, 2, 2)))
        with pytest.raises(ValueError, match="B,3,H,W"):
            ad.lut_apply(e, rng.uniform(0, 1, (1, 3, 3, 3)))


class TestBackwardMechanics:
    def test_reused_node_accumulates_once_per_path(self, rng):
        x = leaf(rng, 3)
        y = ad.add(ad.mul(x, x), x)  # d/dx (x^2 + x) = 2x + 1
        backward(ad.tsum(y))
        assert np.allclose(x.grad, 2 * x.data + 1)

    def test_diamond_graph_visits_each_node_once(self, rng):
        x = leaf(rng, 2)
        a = ad.tanh(x)
        loss = ad.tsum(ad.add(a, a))
        tape = backward(loss)
        ids = [id(n) for n in tape.nodes]
        assert len(ids) == len(set(ids))
        assert np.allclose(x.grad, 2 * (1 - np.tanh(x.data) ** 2))

    def test_topological_order(self, rng):
        x = leaf(rng, 2)
        loss = ad.tsum(ad.square(ad.tanh(x)))
        tape = backward(loss)
        pos = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for p in node.parents:
                assert pos[id(p)] < pos[id(node)]

    def test_scalar_loss_required(self, rng):
        x = leaf(rng, 3)
        with pytest.raises(ValueError, match="scalar"):
            backward(ad.add(x, x))

    def test_non_finite_loss_raises(self):
        x = Tensor(np.array([np.inf]), requires_grad=True)
        with pytest.raises(NumericError, match="finite"):
            backward(ad.tsum(x))

    def test_detached_when_no_parent_requires_grad(self, rng):
        a = Tensor(rng.standard_normal((2, 2)))
        out = ad.tanh(a)
        assert out.parents == ()
        assert not out.requires_grad

    def test_intermediate_grads_are_freed(self, rng):
        x = leaf(rng, 3)
        mid = ad.tanh(x)
        backward(ad.tsum(mid))
        assert mid.grad is None
        assert x.grad is not None

    def test_float64_leaves_give_float64_grads(self, rng):
        x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        assert x.data.dtype == np.float64
        backward(ad.tsum(ad.tanh(x)))
        assert x.grad.dtype == np.float64

    def test_debug_mode_flags_non_finite_op(self):
        ad.DEBUG_CHECK_FINITE = True
        try:
            a = Tensor(np.array([1.0, 0.0]), requires_grad=True)
            b = Tensor(np.array([0.0, 1.0]), requires_grad=True)
            with np.errstate(divide="ignore"):
                with pytest.raises(NumericError, match="div"):
                    ad.div(a, b)
        finally:
            ad.DEBUG_CHECK_FINITE = False
