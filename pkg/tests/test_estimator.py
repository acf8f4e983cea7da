"""Unit tests for the pattern-search trajectory estimator."""

import numpy as np
import pytest

from evtraj.bezier import BezierField
from evtraj.estimator import (
    EstimatorConfig,
    build_view_pyramids,
    estimate_flow,
    refine_step,
    total_variation_map,
    total_variation_sum,
    trajectory_objective,
)
from evtraj.events import EventStream, build_views
from evtraj.multiflow import simulate_events


def rolling_stream(seed=0, size=64, n_shift=20, threshold=0.05):
    """Events from a wrap-around texture sliding 1 px right per frame."""
    rng = np.random.default_rng(seed)
    base = 0.2 + 0.6 * rng.random((size, size))
    base = (base + np.roll(base, 1, 0) + np.roll(base, -1, 0)
            + np.roll(base, 1, 1) + np.roll(base, -1, 1)) / 5.0
    frames = np.stack([np.roll(base, j, axis=1) for j in range(n_shift + 1)])
    ts = np.arange(n_shift + 1, dtype=np.int64) * 4000
    return simulate_events(frames, ts, threshold=threshold), ts


def small_cfg(**overrides):
    # one bin per frame, adjacent before/after windows, 10 px = 5 coarse
    # cells of motion; the opening step must span the full displacement or
    # the search stalls in the correlation valley halfway
    base = dict(
        degree=1, iterations=25, corr_bins=10, context_bins=11,
        view_stride=10, view_count=2, radius=4, levels_target=2,
        levels_intermediate=1, step_px=5.0, step_decay=0.85,
        downsample=2,
    )
    base.update(overrides)
    return EstimatorConfig(**base)


class TestConfigValidation:
    def test_rejects_bad_values(self):
        for kwargs in (
            dict(degree=0),
            dict(iterations=0),
            dict(step_px=0.0),
            dict(step_decay=1.0),
            dict(step_decay=0.0),
            dict(smooth_weight=-0.1),
            dict(downsample=0),
            dict(radius=-1),
        ):
            with pytest.raises(ValueError):
                EstimatorConfig(**kwargs)

    def test_defaults_are_valid(self):
        cfg = EstimatorConfig()
        assert cfg.degree == 2 and cfg.view_count == 5


class TestDegenerateInput:
    def test_empty_stream_returns_zero_field(self):
        stream = EventStream.empty(24, 16)
        cfg = EstimatorConfig(degree=2, iterations=2)
        with pytest.warns(RuntimeWarning):
            field, report = estimate_flow(stream, 0.0, 1.0, cfg)
        assert report.degenerate
        assert field.degree == 2
        assert (field.height, field.width) == (16, 24)
        assert not field.control_points.any()


class TestTotalVariation:
    def test_constant_field_has_zero_variation(self):
        control = np.full((2, 6, 6, 2), 3.7)
        assert total_variation_sum(control) == 0.0
        np.testing.assert_array_equal(total_variation_map(control), 0.0)

    def test_single_spike_counts_every_edge(self):
        control = np.zeros((1, 3, 3, 2))
        control[0, 1, 1, 0] = 2.0
        # interior pixel has 4 neighbors, each edge differs by 2
        assert total_variation_sum(control) == pytest.approx(8.0)
        tv = total_variation_map(control)
        assert tv[1, 1] == pytest.approx(8.0)
        assert tv[0, 1] == pytest.approx(2.0)
        assert tv[0, 0] == 0.0

    def test_map_double_counts_shared_edges(self):
        rng = np.random.default_rng(1)
        control = rng.standard_normal((2, 5, 4, 2))
        assert total_variation_map(control).sum() == pytest.approx(
            2.0 * total_variation_sum(control)
        )


class TestTranslationRecovery:
    def test_linear_field_locks_onto_integer_shift(self):
        stream, ts = rolling_stream()
        field, report = estimate_flow(stream, float(ts[10]), float(ts[20]), small_cfg())
        assert not report.degenerate
        end = field.evaluate(1.0).values
        err = np.hypot(end[..., 0] - 10.0, end[..., 1])
        assert np.median(err) < 0.5
        assert np.mean(err) < 4.0

    def test_trace_is_monotone_and_settles(self):
        stream, ts = rolling_stream(seed=3)
        field, report = estimate_flow(stream, float(ts[10]), float(ts[20]), small_cfg())
        trace = np.asarray(report.trace)
        assert trace.size == 26
        assert np.all(np.diff(trace) >= -1e-12)
        assert len(report.accepted) == 25
        # the opening jump moves nearly everyone, later passes only touch up
        assert sum(report.accepted[-3:]) < sum(report.accepted[:3])

    def test_runs_are_bit_identical(self):
        stream, ts = rolling_stream(seed=5)
        cfg = small_cfg(iterations=8)
        field_a, report_a = estimate_flow(stream, float(ts[10]), float(ts[20]), cfg)
        field_b, report_b = estimate_flow(stream, float(ts[10]), float(ts[20]), cfg)
        np.testing.assert_array_equal(field_a.control_points, field_b.control_points)
        assert report_a.trace == report_b.trace
        assert report_a.accepted == report_b.accepted

    def test_quadratic_degree_still_recovers_linear_motion(self):
        stream, ts = rolling_stream(seed=7)
        cfg = small_cfg(degree=2, iterations=30)
        field, _ = estimate_flow(stream, float(ts[10]), float(ts[20]), cfg)
        end = field.evaluate(1.0).values
        err = np.hypot(end[..., 0] - 10.0, end[..., 1])
        assert np.median(err) < 0.5


class TestSmoothing:
    def test_smoothing_penalty_lowers_objective_of_rough_fields(self):
        stream, ts = rolling_stream(seed=9, size=32, n_shift=8)
        views = build_views(stream, float(ts[4]), float(ts[8]), 5, 5, stride=4, count=2)
        cfg_plain = small_cfg()
        cfg_smooth = small_cfg(smooth_weight=0.5)
        pyramids = build_view_pyramids(views, cfg_plain)

        rng = np.random.default_rng(0)
        h, w = pyramids[0].base_shape[:2]
        rough = BezierField(rng.uniform(-2, 2, size=(1, h, w, 2)))
        plain = trajectory_objective(pyramids, rough, cfg_plain)
        smooth = trajectory_objective(pyramids, rough, cfg_smooth)
        assert smooth.trace[-1] < plain.trace[-1]

    def test_smooth_refinement_trace_is_monotone(self):
        stream, ts = rolling_stream(seed=11)
        cfg = small_cfg(smooth_weight=0.01, iterations=12)
        _, report = estimate_flow(stream, float(ts[10]), float(ts[20]), cfg)
        assert np.all(np.diff(report.trace) >= -1e-12)


class TestImageFusion:
    def test_use_images_requires_frames(self):
        stream, ts = rolling_stream(seed=13, size=32, n_shift=8)
        cfg = small_cfg(use_images=True)
        with pytest.raises(ValueError):
            estimate_flow(stream, float(ts[4]), float(ts[8]), cfg)

    def test_frame_resolution_must_match_sensor(self):
        stream, ts = rolling_stream(seed=13, size=32, n_shift=8)
        cfg = small_cfg(use_images=True)
        bad = (np.zeros((16, 16)), np.zeros((16, 16)))
        with pytest.raises(ValueError):
            estimate_flow(stream, float(ts[4]), float(ts[8]), cfg, frames=bad)

    def test_frame_pair_is_accepted(self):
        stream, ts = rolling_stream(seed=13, size=32, n_shift=8)
        cfg = small_cfg(use_images=True, iterations=4)
        rng = np.random.default_rng(2)
        frames = (rng.random((32, 32)), rng.random((32, 32)))
        field, report = estimate_flow(
            stream, float(ts[4]), float(ts[8]), cfg, frames=frames
        )
        assert not report.degenerate


class TestRefineStep:
    def _pyramids_and_field(self, seed=15):
        stream, ts = rolling_stream(seed=seed, size=32, n_shift=8)
        views = build_views(stream, float(ts[4]), float(ts[8]), 5, 5, stride=4, count=2)
        cfg = small_cfg()
        pyramids = build_view_pyramids(views, cfg)
        h, w = pyramids[0].base_shape[:2]
        return cfg, pyramids, BezierField(np.zeros((1, h, w, 2)))

    def test_rejects_non_positive_step(self):
        cfg, pyramids, field = self._pyramids_and_field()
        with pytest.raises(ValueError):
            refine_step(field, pyramids, 0.0, cfg)

    def test_single_step_never_decreases_objective(self):
        cfg, pyramids, field = self._pyramids_and_field(seed=17)
        before = trajectory_objective(pyramids, field, cfg).trace[-1]
        moved, accepted = refine_step(field, pyramids, 2.0, cfg)
        after = trajectory_objective(pyramids, moved, cfg).trace[-1]
        assert after >= before - 1e-12
        assert 0 <= accepted <= field.height * field.width
