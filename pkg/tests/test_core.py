import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsregret.core import (ComparatorSequence, CurvatureParams, DecisionBox,
                           EXP_LINK, GlmLoss, LossBundle, SQUARE_LINK, SquaredLoss,
                           eval_grad, eval_loss, glm_curvature, squared_curvature,
                           total_variation, with_box)


class TestEvalLoss:
    def test_squared_zero_residual(self):
        assert eval_loss(SquaredLoss(1.0, B=1.0), [1.0]) == 0.0

    def test_squared_unit_residual(self):
        assert eval_loss(SquaredLoss(1.0, B=1.0), [0.0]) == 1.0

    def test_glm_square_link(self):
        loss = GlmLoss(SQUARE_LINK, [1.0, 1.0])
        assert eval_loss(loss, [1.0, 2.0]) == pytest.approx(9.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            eval_loss(SquaredLoss([1.0, 0.0], B=1.0), [1.0, 0.0, 0.0])

    def test_label_outside_box_rejected(self):
        with pytest.raises(ValueError):
            SquaredLoss(2.0, B=1.0)


class TestEvalGrad:
    def test_squared_minimizer(self):
        assert eval_grad(SquaredLoss(2.0, B=2.0), [2.0]) == pytest.approx([0.0])

    def test_squared_slope(self):
        assert eval_grad(SquaredLoss(0.0, B=1.0), [3.0]) == pytest.approx([6.0])

    def test_glm_exp_link(self):
        loss = GlmLoss(EXP_LINK, [1.0, 0.0])
        np.testing.assert_allclose(eval_grad(loss, [0.0, 5.0]), [1.0, 0.0])

    def test_matches_finite_differences(self):
        # central differences, 100 random points per loss kind
        rng = np.random.default_rng(0)
        h = 1e-5
        losses = [
            SquaredLoss(rng.uniform(-1, 1, 3), B=1.0),
            GlmLoss(SQUARE_LINK, rng.uniform(-1, 1, 3)),
            GlmLoss(EXP_LINK, rng.uniform(-1, 1, 3)),
        ]
        for loss in losses:
            for _ in range(100):
                x = rng.uniform(-1, 1, 3)
                g = eval_grad(loss, x)
                for k in range(3):
                    e = np.zeros(3)
                    e[k] = h
                    fd = (eval_loss(loss, x + e) - eval_loss(loss, x - e)) / (2 * h)
                    assert g[k] == pytest.approx(fd, rel=1e-6, abs=1e-7)


def test_squared_exp_concavity_certificate():
    # f(y) >= f(x) + (y-x) f'(x) + (alpha/2) ((y-x) f'(x))^2 with alpha = 1/(8 B^2)
    rng = np.random.default_rng(1)
    B = 1.5
    alpha = 1.0 / (8.0 * B * B)
    for _ in range(1000):
        label = rng.uniform(-B, B)
        loss = SquaredLoss(label, B=B)
        x, y = rng.uniform(-B, B, 2)
        inner = (y - x) * eval_grad(loss, [x])[0]
        lhs = eval_loss(loss, [y])
        rhs = eval_loss(loss, [x]) + inner + 0.5 * alpha * inner ** 2
        assert lhs >= rhs - 1e-10


class TestGlmCurvature:
    def test_identity_instance(self):
        c = glm_curvature(1.0, 1.0, 1.0, 1.0, 1.0)
        assert (c.G, c.beta, c.alpha, c.G_dagger) == (1.0, 1.0, 1.0, 1.0)

    def test_direct_substitution(self):
        c = glm_curvature(2.0, 1.0, 3.0, 2.0, 1.0)
        assert c.G == pytest.approx(2.0)
        assert c.beta == pytest.approx(8.0)
        assert c.alpha == pytest.approx(1.0 / 9.0)
        assert c.G_dagger == pytest.approx(6.0)

    def test_beta_floor(self):
        c = glm_curvature(1.0, 1.0, 1.0, 0.5, 0.25)
        assert c.beta == 1.0
        assert c.alpha == pytest.approx(0.25)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            glm_curvature(0.0, 1.0, 1.0, 1.0, 1.0)

    @given(r1=st.floats(0.1, 5.0), r2=st.floats(0.1, 5.0))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_radius(self, r1, r2):
        lo, hi = sorted([r1, r2])
        a = glm_curvature(lo, 1.0, 2.0, 1.5, 0.5)
        b = glm_curvature(hi, 1.0, 2.0, 1.5, 0.5)
        assert b.G >= a.G and b.beta >= a.beta and b.G_dagger >= a.G_dagger


class TestCurvatureParams:
    def test_rejects_g_above_dagger(self):
        with pytest.raises(ValueError):
            CurvatureParams(G=2.0, G_dagger=1.0, alpha=0.1, beta=1.0, H=0.0, B=1.0)

    def test_rejects_small_beta(self):
        with pytest.raises(ValueError):
            CurvatureParams(G=1.0, G_dagger=1.0, alpha=0.1, beta=0.5, H=0.0, B=1.0)

    def test_squared_defaults(self):
        c = squared_curvature(2.0)
        assert c.alpha == pytest.approx(1.0 / 32.0)
        assert c.H == 2.0 and c.beta == 2.0

    def test_with_box(self):
        c = with_box(squared_curvature(1.0), 3.0)
        assert c.B == 3.0


class TestDecisionBox:
    def test_clamp_and_contains(self):
        box = DecisionBox(1.0, 2)
        np.testing.assert_allclose(box.clamp(np.array([2.0, -0.5])), [1.0, -0.5])
        assert box.contains(np.array([1.0, -1.0]))
        assert not box.contains(np.array([1.0001, 0.0]))

    def test_diameter(self):
        assert DecisionBox(2.0, 4).l2_diameter == pytest.approx(8.0)

    def test_rejects_bad_width(self):
        with pytest.raises(ValueError):
            DecisionBox(0.0, 1)


class TestComparatorSequence:
    def test_tv_matches_recomputation(self):
        rng = np.random.default_rng(2)
        w = rng.uniform(-1, 1, (50, 3))
        seq = ComparatorSequence(w)
        manual = sum(float(np.sum(np.abs(w[t] - w[t - 1]))) for t in range(1, 50))
        assert seq.total_variation == pytest.approx(manual, rel=1e-12)

    def test_membership(self):
        seq = ComparatorSequence(np.array([0.0, 0.5, 0.5]))
        assert seq.in_tv_class(0.5, 1.0)
        assert not seq.in_tv_class(0.4, 1.0)
        assert not seq.in_tv_class(0.5, 0.4)

    def test_single_point_tv(self):
        assert total_variation(np.array([3.0])) == 0.0


class TestLossBundle:
    def test_squared_vectorized_values(self):
        rng = np.random.default_rng(3)
        y = rng.uniform(-1, 1, (20, 2))
        bundle = LossBundle.squared(y, squared_curvature(1.0))
        X = rng.uniform(-1, 1, (20, 2))
        manual = np.array([bundle[t].value(X[t]) for t in range(20)])
        np.testing.assert_allclose(bundle.values_at(X), manual, rtol=1e-12)

    def test_glm_requires_matching_links(self):
        with pytest.raises(ValueError):
            LossBundle.glm([SQUARE_LINK], np.ones((2, 1)),
                           glm_curvature(1, 1, 1, 1, 1))
