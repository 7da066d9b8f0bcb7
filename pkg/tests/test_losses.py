"""Loss terms: fixed-point exactness, loop oracles, gradient checks."""

from __future__ import annotations

import numpy as np
import pytest

import nlut.autodiff as ad
from nlut.autodiff import Tensor, backward
from nlut.errors import NumericError
from nlut.losses import (LossLog, LossReport, LossWeights, content_loss,
                         mono_reg, monotonicity_penalty, smooth_reg,
                         smoothness, style_loss, total_loss)
from nlut.lut3d import make_identity

from oracles import grad_close, numeric_grad


def smooth_ref(x: np.ndarray) -> float:
    """Loop over every neighbor pair on every axis."""
    total = 0.0
    d = x.shape[1]
    for c in range(3):
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    if i + 1 < d:
                        total += (x[c, i + 1, j, k] - x[c, i, j, k]) ** 2
                    if j + 1 < d:
                        total += (x[c, i, j + 1, k] - x[c, i, j, k]) ** 2
                    if k + 1 < d:
                        total += (x[c, i, j, k + 1] - x[c, i, j, k]) ** 2
    return total


def mono_ref(x: np.ndarray) -> float:
    """Loop over own-axis neighbor pairs per channel."""
    total = 0.0
    d = x.shape[1]
    for c in range(3):
        for i in range(d):
            for j in range(d):
                for k in range(d):
                    idx = [i, j, k]
                    if idx[c] + 1 < d:
                        nxt = list(idx)
                        nxt[c] += 1
                        total += max(x[(c, *idx)] - x[(c, *nxt)], 0.0)
    return total


class TestRegularizerExactness:
    def test_smooth_of_constant_lattice_is_exactly_zero(self):
        ent = np.full((3, 5, 5, 5), 0.37, dtype=np.float32)
        assert float(smooth_reg(Tensor(ent)).data) == 0.0
        assert smoothness(ent) == 0.0

    def test_smooth_of_constant_batch_is_exactly_zero(self):
        ent = np.full((4, 3, 4, 4, 4), -1.5, dtype=np.float32)
        assert float(smooth_reg(Tensor(ent)).data) == 0.0

    @pytest.mark.parametrize("dim", [2, 9, 33])
    def test_mono_of_identity_is_exactly_zero(self, dim):
        lut = make_identity(dim)
        assert float(mono_reg(Tensor(lut.entries)).data) == 0.0
        assert monotonicity_penalty(lut) == 0.0

    def test_descending_red_channel_costs_exactly_four(self):
        # D=2 identity with the red channel flipped along its own axis:
        # four (green, blue) columns each drop by 1, nothing else moves.
        ent = make_identity(2).entries.copy()
        ent[0] = ent[0][::-1]
        assert float(mono_reg(Tensor(ent)).data) == 4.0
        assert monotonicity_penalty(ent) == 4.0

    def test_identity_smoothness_matches_closed_form(self):
        # Each channel varies only along its own axis in steps of 1/(D-1):
        # D^2 columns of (D-1) steps, three channels.
        dim = 7
        lut = make_identity(dim)
        step = 1.0 / (dim - 1)
        want = 3 * dim * dim * (dim - 1) * step * step
        assert abs(smoothness(lut) - want) < 1e-9


class TestRegularizerOracles:
    def test_smooth_matches_loop_reference(self, rng):
        x = rng.standard_normal((3, 5, 5, 5))
        got = float(smooth_reg(Tensor(x)).data)
        assert abs(got - smooth_ref(x)) < 1e-9

    def test_mono_matches_loop_reference(self, rng):
        x = rng.standard_normal((3, 5, 5, 5))
        got = float(mono_reg(Tensor(x)).data)
        assert abs(got - mono_ref(x)) < 1e-9

    def test_batch_forms_average_per_sample_values(self, rng):
        x = rng.standard_normal((3, 3, 4, 4, 4))
        sm = np.mean([smooth_ref(x[b]) for b in range(3)])
        mo = np.mean([mono_ref(x[b]) for b in range(3)])
        assert abs(float(smooth_reg(Tensor(x)).data) - sm) < 1e-9
        assert abs(float(mono_reg(Tensor(x)).data) - mo) < 1e-9

    @pytest.mark.parametrize("shape", [(3, 4, 4), (2, 4, 4, 4),
                                       (3, 4, 4, 5), (1, 2, 3, 4, 4, 4)])
    def test_bad_entry_shapes_rejected(self, shape):
        with pytest.raises(ValueError, match="entries"):
            smooth_reg(Tensor(np.zeros(shape)))

    def test_weighted_batch_equals_explicit_repeats(self, rng):
        x = rng.standard_normal((2, 3, 4, 4, 4))
        rep = np.concatenate([x[:1], x[:1], x[:1], x[1:]], axis=0)
        for node in (smooth_reg, mono_reg):
            weighted = float(node(Tensor(x), sample_weights=[3.0, 1.0]).data)
            plain = float(node(Tensor(rep)).data)
            assert abs(weighted - plain) < 1e-12

    def test_weighted_gradient_matches_finite_differences(self, rng):
        x = rng.standard_normal((2, 3, 4, 4, 4))
        w = [5.0, 2.0]
        for node in (smooth_reg, mono_reg):
            t = Tensor(x, requires_grad=True)
            backward(node(t, sample_weights=w))
            num = numeric_grad(
                lambda: float(node(Tensor(x), sample_weights=w).data), x)
            assert grad_close(t.grad, num)


class TestRegularizerGradients:
    def test_smooth_gradient_matches_finite_differences(self, rng):
        x = rng.standard_normal((3, 4, 4, 4))
        t = Tensor(x, requires_grad=True)
        backward(smooth_reg(t))
        num = numeric_grad(lambda: float(smooth_reg(Tensor(x)).data), x)
        assert grad_close(t.grad, num)

    def test_smooth_gradient_batched(self, rng):
        x = rng.standard_normal((2, 3, 4, 4, 4))
        t = Tensor(x, requires_grad=True)
        backward(smooth_reg(t))
        num = numeric_grad(lambda: float(smooth_reg(Tensor(x)).data), x)
        assert grad_close(t.grad, num)

    def test_mono_gradient_matches_finite_differences(self, rng):
        # Random entries keep every hinge comfortably away from its kink.
        x = rng.standard_normal((3, 4, 4, 4))
        t = Tensor(x, requires_grad=True)
        backward(mono_reg(t))
        num = numeric_grad(lambda: float(mono_reg(Tensor(x)).data), x)
        assert grad_close(t.grad, num)

    def test_mono_gradient_zero_on_identity(self):
        t = Tensor(make_identity(5, dtype=np.float64).entries,
                   requires_grad=True)
        backward(mono_reg(t))
        assert np.all(t.grad == 0.0)


def tiny_pyramid(rng, b: int, seed_shift: float = 0.0):
    shapes = [(b, 2, 8, 8), (b, 3, 4, 4), (b, 4, 2, 2), (b, 5, 2, 2)]
    return [Tensor(rng.standard_normal(s) + seed_shift) for s in shapes]


class TestStyleLoss:
    def test_zero_when_pyramids_identical(self, rng):
        p = tiny_pyramid(rng, 2)
        assert float(style_loss(p, p).data) == 0.0

    def test_matches_manual_stat_norms(self, rng):
        a = tiny_pyramid(rng, 2)
        b = tiny_pyramid(rng, 2, seed_shift=0.3)
        want = 0.0
        for j in range(4):
            xa, xb = a[j].data, b[j].data
            per = np.zeros(2)
            for t, (x, y) in enumerate([(xa, xb)]):
                mu = x.mean(axis=(2, 3)) - y.mean(axis=(2, 3))
                sd = (np.sqrt(x.var(axis=(2, 3)) + 1e-5)
                      - np.sqrt(y.var(axis=(2, 3)) + 1e-5))
                per += (np.linalg.norm(mu, axis=1)
                        + np.linalg.norm(sd, axis=1))
            want += per.mean()
        got = float(style_loss(a, b).data)
        assert abs(got - want) < 1e-9

    def test_style_batch_one_broadcasts(self, rng):
        a = tiny_pyramid(rng, 3)
        s1 = tiny_pyramid(rng, 1, seed_shift=0.5)
        s3 = [Tensor(np.repeat(t.data, 3, axis=0)) for t in s1]
        got = float(style_loss(a, s1).data)
        want = float(style_loss(a, s3).data)
        assert abs(got - want) < 1e-12

    def test_gradient_matches_finite_differences(self, rng):
        a_arrays = [rng.standard_normal((2, c, 4, 4)) for c in (2, 3, 4, 5)]
        b = tiny_pyramid(rng, 1, seed_shift=0.2)

        leaves = [Tensor(x, requires_grad=True) for x in a_arrays]
        backward(style_loss(leaves, b))
        for x, leaf in zip(a_arrays, leaves):
            num = numeric_grad(
                lambda: float(style_loss([Tensor(y) for y in a_arrays],
                                         b).data), x)
            assert grad_close(leaf.grad, num)

    def test_weighted_batch_equals_explicit_repeats(self, rng):
        base = [rng.standard_normal((2, c, 4, 4)) for c in (2, 3, 4, 5)]
        rep = [np.concatenate([x[:1], x[:1], x[1:]], axis=0) for x in base]
        style = tiny_pyramid(rng, 1, seed_shift=0.4)
        weighted = float(style_loss([Tensor(x) for x in base], style,
                                    sample_weights=[2.0, 1.0]).data)
        plain = float(style_loss([Tensor(x) for x in rep], style).data)
        assert abs(weighted - plain) < 1e-12


class TestContentLoss:
    def test_shifted_features_give_root_element_count(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        got = float(content_loss(Tensor(x + 1.0), Tensor(x)).data)
        assert abs(got - np.sqrt(3 * 4 * 4)) < 1e-9

    def test_gradient_matches_finite_differences(self, rng):
        x = rng.standard_normal((2, 3, 4, 4))
        ref = rng.standard_normal((2, 3, 4, 4))
        t = Tensor(x, requires_grad=True)
        backward(content_loss(t, Tensor(ref)))
        num = numeric_grad(
            lambda: float(content_loss(Tensor(x), Tensor(ref)).data), x)
        assert grad_close(t.grad, num)

    def test_weighted_gradient_matches_finite_differences(self, rng):
        x = rng.standard_normal((3, 2, 4, 4))
        ref = rng.standard_normal((3, 2, 4, 4))
        w = [3.0, 1.0, 2.0]
        t = Tensor(x, requires_grad=True)
        backward(content_loss(t, Tensor(ref), sample_weights=w))
        num = numeric_grad(
            lambda: float(content_loss(Tensor(x), Tensor(ref),
                                       sample_weights=w).data), x)
        assert grad_close(t.grad, num)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="shapes differ"):
            content_loss(Tensor(np.zeros((1, 2, 4, 4))),
                         Tensor(np.zeros((1, 2, 4, 5))))

    def test_bad_sample_weights_rejected(self, rng):
        x = Tensor(rng.standard_normal((2, 2, 4, 4)))
        with pytest.raises(ValueError, match="sample_weights"):
            content_loss(x, x, sample_weights=[1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            content_loss(x, x, sample_weights=[-1.0, 2.0])


class TestTotalLoss:
    def _parts(self, rng):
        ent = Tensor(rng.standard_normal((3, 4, 4, 4)), requires_grad=True)
        pyr_a = tiny_pyramid(rng, 2)
        pyr_b = tiny_pyramid(rng, 2, seed_shift=0.1)
        return (ent, style_loss(pyr_a, pyr_b),
                content_loss(pyr_a[3], pyr_b[3]),
                smooth_reg(ent), mono_reg(ent))

    def test_combination_and_report(self, rng):
        ent, s, c, sm, mo = self._parts(rng)
        w = LossWeights(style=0.5, content=2.0, smooth=1e-3, mono=5.0)
        total, rep = total_loss(s, c, sm, mo, w)
        want = (0.5 * float(s.data) + 2.0 * float(c.data)
                + 1e-3 * float(sm.data) + 5.0 * float(mo.data))
        assert abs(float(total.data) - want) < 1e-12
        assert rep.total == float(total.data)
        assert rep.style == float(s.data)
        assert rep.mono == float(mo.data)

    def test_gradient_reaches_lattice_through_both_regularizers(self, rng):
        ent, s, c, sm, mo = self._parts(rng)
        total, _ = total_loss(s, c, sm, mo)
        backward(total)
        assert ent.grad is not None
        assert np.abs(ent.grad).max() > 0

    def test_non_finite_part_is_named(self):
        good = Tensor(np.asarray(1.0))
        bad = Tensor(np.asarray(np.nan))
        with pytest.raises(NumericError, match="content"):
            total_loss(good, bad, good, good)
        with pytest.raises(NumericError, match="mono"):
            total_loss(good, good, good, Tensor(np.asarray(np.inf)))

    def test_default_weights_follow_config(self):
        w = LossWeights()
        assert (w.style, w.content, w.smooth, w.mono) == (1.0, 4.0, 1e-4, 10.0)

    def test_weight_validation(self):
        with pytest.raises(ValueError, match="finite"):
            LossWeights(content=-1.0)
        with pytest.raises(ValueError, match="both be zero"):
            LossWeights(style=0.0, content=0.0)
        LossWeights(style=0.0)  # content alone is fine


class TestLossLog:
    def test_header_and_rows(self, tmp_path):
        path = tmp_path / "loss.csv"
        rep = LossReport(style=1.25, content=0.5, smooth=1e-6, mono=0.0,
                         total=3.2500010000000001)
        with LossLog(path) as log:
            log.append(0, rep)
            log.append(1, rep)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,style,content,smooth,mono,total"
        assert lines[1].startswith("0,1.25,0.5,1e-06,0,")
        assert len(lines) == 3

    def test_rows_parse_back_to_floats(self, tmp_path):
        path = tmp_path / "loss.csv"
        rep = LossReport(style=0.123456789, content=2.0, smooth=3e-5,
                         mono=0.25, total=42.0)
        with LossLog(path) as log:
            log.append(7, rep)
        cells = path.read_text().splitlines()[1].split(",")
        assert int(cells[0]) == 7
        assert abs(float(cells[1]) - 0.123456789) < 1e-9
        assert float(cells[5]) == 42.0
