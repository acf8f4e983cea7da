"""Unit tests for the trajectory-field primitives."""

import numpy as np
import pytest

from evtraj.bezier import (
    BezierField,
    FlowMap,
    apply_update,
    bernstein_weights,
    bilinear_upsample_weights,
    evaluate_field,
    fit_bezier_to_samples,
    upsample_convex,
)


class TestBernsteinWeights:
    def test_known_values(self):
        np.testing.assert_allclose(bernstein_weights(2, 0.5), [0.25, 0.5, 0.25])
        np.testing.assert_allclose(bernstein_weights(1, 0.3), [0.7, 0.3])

    def test_partition_of_unity(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(1, 16))
            tau = float(rng.random())
            w = bernstein_weights(n, tau)
            assert w.shape == (n + 1,)
            assert abs(w.sum() - 1.0) < 1e-12
            assert np.all(w >= 0.0)

    def test_endpoints_are_exact(self):
        for n in range(1, 12):
            w0 = bernstein_weights(n, 0.0)
            w1 = bernstein_weights(n, 1.0)
            assert w0[0] == 1.0 and not w0[1:].any()
            assert w1[-1] == 1.0 and not w1[:-1].any()

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            bernstein_weights(-1, 0.5)
        with pytest.raises(ValueError):
            bernstein_weights(2, 1.5)


class TestFieldEvaluation:
    def test_zero_field_evaluates_to_zero(self):
        field = BezierField.zeros(3, 4, 5)
        fm = field.evaluate(0.7)
        assert isinstance(fm, FlowMap)
        assert fm.tau == 0.7
        assert not fm.values.any()

    def test_tau_one_reproduces_last_control_point(self):
        rng = np.random.default_rng(11)
        for n in (1, 2, 5, 9):
            ctrl = rng.standard_normal((n, 6, 7, 2))
            field = BezierField(ctrl)
            assert np.array_equal(field.evaluate(1.0).values, ctrl[-1])

    def test_tau_zero_is_identically_zero(self):
        rng = np.random.default_rng(12)
        field = BezierField(rng.standard_normal((4, 5, 5, 2)))
        assert not field.evaluate(0.0).values.any()

    def test_linearity_in_control_points(self):
        rng = np.random.default_rng(13)
        a = rng.standard_normal((3, 4, 4, 2))
        b = rng.standard_normal((3, 4, 4, 2))
        tau = 0.37
        lhs = BezierField(2.5 * a - 0.5 * b).evaluate(tau).values
        rhs = (
            2.5 * BezierField(a).evaluate(tau).values
            - 0.5 * BezierField(b).evaluate(tau).values
        )
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_evaluate_field_helper_matches_method(self):
        field = BezierField(np.ones((2, 3, 3, 2)))
        np.testing.assert_array_equal(
            evaluate_field(field, 0.4).values, field.evaluate(0.4).values
        )

    def test_apply_update_adds_deltas(self):
        field = BezierField.zeros(2, 3, 3)
        deltas = np.full((2, 3, 3, 2), 0.25)
        updated = apply_update(field, deltas)
        np.testing.assert_array_equal(updated.control_points, deltas)
        with pytest.raises(ValueError):
            apply_update(field, np.zeros((1, 3, 3, 2)))


class TestFlowMapValidation:
    def test_shape_and_tau_checks(self):
        with pytest.raises(ValueError):
            FlowMap(np.zeros((4, 4)))
        with pytest.raises(ValueError):
            FlowMap(np.zeros((4, 4, 2)), tau=1.5)
        with pytest.raises(ValueError):
            FlowMap(np.zeros((4, 4, 2)), valid=np.ones((3, 3), dtype=bool))


class TestConvexUpsampling:
    def test_uniform_field_scales_by_factor(self):
        field = BezierField(np.full((2, 4, 4, 2), 0.5))
        up = upsample_convex(field, 8)
        assert (up.height, up.width) == (32, 32)
        np.testing.assert_allclose(up.control_points, 4.0)

    def test_bilinear_weights_are_convex(self):
        w = bilinear_upsample_weights(4, 5, 4)
        assert w.shape == (16, 20, 3, 3)
        assert np.all(w >= 0.0)
        np.testing.assert_allclose(w.sum(axis=(2, 3)), 1.0, atol=1e-12)

    def test_custom_weights_are_validated(self):
        field = BezierField.zeros(1, 2, 2)
        bad = np.zeros((4, 4, 3, 3))
        with pytest.raises(ValueError):
            upsample_convex(field, 2, weights=bad)
        bad[..., 1, 1] = -1.0
        with pytest.raises(ValueError):
            upsample_convex(field, 2, weights=bad)

    def test_linear_ramp_keeps_unit_slope(self):
        # A displacement ramp lies in the span of bilinear interpolation:
        # after the factor rescaling, the fine field must climb exactly one
        # fine-pixel unit per column away from the clamped borders.
        h, w, factor = 6, 6, 2
        ramp = np.tile(np.arange(w, dtype=np.float64)[None, :, None], (h, 1, 2))
        up = upsample_convex(BezierField(ramp[None]), factor)
        inner = up.control_points[0, :, factor:-factor, 0]
        steps = np.diff(inner, axis=1)
        np.testing.assert_allclose(steps, 1.0, atol=1e-9)
        assert np.ptp(inner, axis=0).max() < 1e-9


class TestLeastSquaresFit:
    def test_round_trip_recovers_control_points(self):
        rng = np.random.default_rng(5)
        for degree in (1, 2, 4, 7, 10):
            ctrl = 3.0 * rng.standard_normal((degree, 3, 4, 2))
            field = BezierField(ctrl)
            taus = np.linspace(0.05, 1.0, degree + 3)
            samples = [(float(t), field.evaluate(float(t)).values) for t in taus]
            fitted = fit_bezier_to_samples(samples, degree)
            np.testing.assert_allclose(fitted.control_points, ctrl, atol=1e-6)

    def test_underdetermined_and_duplicate_taus_fail(self):
        values = np.zeros((2, 2, 2))
        with pytest.raises(ValueError):
            fit_bezier_to_samples([(0.5, values)], 2)
        with pytest.raises(ValueError):
            fit_bezier_to_samples([(0.5, values), (0.5, values)], 2)
        with pytest.raises(ValueError):
            fit_bezier_to_samples([(0.0, values), (1.0, values)], 2)
