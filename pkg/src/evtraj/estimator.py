"""Dense trajectory estimation by greedy pattern search over control points.

The learned update operator usually driving this kind of pipeline is replaced
by a deterministic, training-free coordinate search: every pixel keeps its
own Bezier control points, and each iteration tries moving one control point
by +-delta along one axis, keeping the move that most improves that pixel's
summed multi-view correlation. The step shrinks geometrically, so early
iterations cross whole cells and late ones settle sub-cell offsets. All
positions here live on the downsampled feature grid; the full-resolution
field is produced at the end by convex upsampling.

With a smoothness weight the objective adds a total-variation penalty tying
neighboring control points together; updates then run on a checkerboard
schedule so every accepted move still increases the global objective.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field as dataclass_field
from typing import Sequence

import numpy as np

from . import bezier, correlation, events as ev

#: Candidate axis moves in tie-break order: +x, -x, +y, -y.
_MOVES = ((1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0))


@dataclass(frozen=True)
class EstimatorConfig:
    """Pipeline settings; defaults are the documented desk-scale choice."""

    degree: int = 2
    iterations: int = 12
    corr_bins: int = 5
    context_bins: int = 5
    view_stride: int = 1
    view_count: int = 5
    radius: int = 4
    levels_target: int = 4
    levels_intermediate: int = 1
    levels_image: int = 4
    step_px: float = 4.0
    step_decay: float = 0.7
    smooth_weight: float = 0.0
    downsample: int = 8
    use_images: bool = False
    grid_budget_bytes: int = ev.DEFAULT_GRID_BUDGET_BYTES
    volume_budget_bytes: int = correlation.DEFAULT_VOLUME_BUDGET_BYTES

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError(f"degree must be >= 1, got {self.degree}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.step_px <= 0.0:
            raise ValueError(f"step_px must be > 0, got {self.step_px}")
        if not 0.0 < self.step_decay < 1.0:
            raise ValueError(f"step_decay must lie in (0, 1), got {self.step_decay}")
        if self.smooth_weight < 0.0:
            raise ValueError(f"smooth_weight must be >= 0, got {self.smooth_weight}")
        if self.downsample < 1:
            raise ValueError(f"downsample must be >= 1, got {self.downsample}")
        if self.radius < 0:
            raise ValueError(f"radius must be >= 0, got {self.radius}")


@dataclass
class ObjectiveReport:
    """Per-pixel correlation score plus the optimization trace.

    ``score`` averages each pixel's center-tap correlations over the lookup
    views (each tap lies in [-1, 1]); ``trace`` records the mean objective,
    including any smoothness penalty, before iteration 0 and after each
    accepted sweep, so it is non-decreasing. ``accepted`` counts moves per
    iteration. ``degenerate`` flags an effectively empty event stream.
    """

    score: np.ndarray
    trace: list[float] = dataclass_field(default_factory=list)
    accepted: list[int] = dataclass_field(default_factory=list)
    degenerate: bool = False


class _Workspace:
    """Level-0 correlation maps reshaped for per-pixel gathers."""

    def __init__(self, pyramids: Sequence[correlation.CorrelationVolumePyramid]):
        if not pyramids:
            raise ValueError("need at least one correlation pyramid")
        shape = pyramids[0].base_shape
        h, w = shape[0], shape[1]
        if any(p.base_shape[:2] != (h, w) for p in pyramids):
            raise ValueError("pyramids disagree on the reference grid shape")
        self.height = h
        self.width = w
        self.volumes = [p.levels[0].reshape(h * w, *p.base_shape[2:]) for p in pyramids]
        self.taus = np.array([p.tau for p in pyramids])
        self.base_x = np.tile(np.arange(w, dtype=np.float64), h)
        self.base_y = np.repeat(np.arange(h, dtype=np.float64), w)

    def bernstein(self, degree: int) -> np.ndarray:
        # weight of control points 1..n at each view time, shape (V, n)
        return np.stack([bezier.bernstein_weights(degree, t)[1:] for t in self.taus])

    def correlation_score(self, control: np.ndarray, bern: np.ndarray) -> np.ndarray:
        """Mean center-tap correlation per pixel, shape (h*w,)."""
        offsets = np.tensordot(bern, control.reshape(control.shape[0], -1, 2), (1, 0))
        taps = np.zeros((len(self.volumes), self.base_x.size))
        for v, vol in enumerate(self.volumes):
            rows = self.base_y + offsets[v, :, 1]
            cols = self.base_x + offsets[v, :, 0]
            taps[v] = correlation.bilinear_gather(vol, rows, cols)[:, 0]
        return taps.mean(axis=0)

    def candidate_score(
        self, control: np.ndarray, bern: np.ndarray, index: int, dx: float, dy: float
    ) -> np.ndarray:
        """Correlation score with control point ``index`` shifted by (dx, dy)."""
        offsets = np.tensordot(bern, control.reshape(control.shape[0], -1, 2), (1, 0))
        taps = np.zeros((len(self.volumes), self.base_x.size))
        for v, vol in enumerate(self.volumes):
            rows = self.base_y + offsets[v, :, 1] + bern[v, index] * dy
            cols = self.base_x + offsets[v, :, 0] + bern[v, index] * dx
            taps[v] = correlation.bilinear_gather(vol, rows, cols)[:, 0]
        return taps.mean(axis=0)


def _neighbor_stacks(plane: np.ndarray):
    """Per-pixel list of (neighbor values, validity) for the 4-neighborhood."""
    h, w = plane.shape[:2]
    out = []
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        vals = np.zeros_like(plane)
        ok = np.zeros((h, w), dtype=bool)
        ys = slice(max(dy, 0), h + min(dy, 0))
        xs = slice(max(dx, 0), w + min(dx, 0))
        ys_src = slice(max(-dy, 0), h + min(-dy, 0))
        xs_src = slice(max(-dx, 0), w + min(-dx, 0))
        vals[ys, xs] = plane[ys_src, xs_src]
        ok[ys, xs] = True
        out.append((vals, ok))
    return out


def total_variation_map(control: np.ndarray) -> np.ndarray:
    """Sum of absolute 4-neighbor differences of every control component, per pixel."""
    n, h, w, _ = control.shape
    tv = np.zeros((h, w))
    flat = control.transpose(1, 2, 0, 3).reshape(h, w, 2 * n)
    for vals, ok in _neighbor_stacks(flat):
        tv += np.where(ok[..., None], np.abs(flat - vals), 0.0).sum(axis=-1)
    return tv


def total_variation_sum(control: np.ndarray) -> float:
    """Total variation with each neighbor edge counted once."""
    n = control.shape[0]
    flat = control.reshape(n, *control.shape[1:3], 2)
    dy = np.abs(np.diff(flat, axis=1)).sum()
    dx = np.abs(np.diff(flat, axis=2)).sum()
    return float(dy + dx)


def _tv_delta(control: np.ndarray, index: int, axis: int, delta: float) -> np.ndarray:
    """Change in each pixel's local TV if its (index, axis) component moved by delta."""
    plane = control[index, :, :, axis]
    change = np.zeros_like(plane)
    for vals, ok in _neighbor_stacks(plane):
        change += np.where(ok, np.abs(plane + delta - vals) - np.abs(plane - vals), 0.0)
    return change


def _objective_mean(ws: _Workspace, control: np.ndarray, bern: np.ndarray, lam: float) -> float:
    corr = ws.correlation_score(control, bern)
    value = corr.mean()
    if lam > 0.0:
        value -= lam * total_variation_sum(control) / corr.size
    return float(value)


def trajectory_objective(
    pyramids: Sequence[correlation.CorrelationVolumePyramid],
    field: bezier.BezierField,
    config: EstimatorConfig,
) -> ObjectiveReport:
    """Score a field against the views: higher means better-aligned taps."""
    ws = _Workspace(pyramids)
    if (field.height, field.width) != (ws.height, ws.width):
        raise ValueError(
            f"field is {(field.height, field.width)} but the volumes expect "
            f"{(ws.height, ws.width)}"
        )
    bern = ws.bernstein(field.degree)
    control = field.control_points
    score = ws.correlation_score(control, bern).reshape(ws.height, ws.width)
    return ObjectiveReport(
        score=score,
        trace=[_objective_mean(ws, control, bern, config.smooth_weight)],
    )


def _sweep(
    ws: _Workspace,
    control: np.ndarray,
    bern: np.ndarray,
    delta: float,
    lam: float,
    active: np.ndarray,
) -> int:
    """One greedy pass: each active pixel takes its best strictly-improving move.

    Candidates are ordered by control-point index then +x, -x, +y, -y; the
    first best candidate wins ties. Returns the number of accepted moves.
    """
    n = control.shape[0]
    current = ws.correlation_score(control, bern)
    best_gain = np.zeros_like(current)
    best_slot = np.full(current.size, -1, dtype=np.int64)

    slot = 0
    for index in range(n):
        for sx, sy in _MOVES:
            dx, dy = sx * delta, sy * delta
            gain = ws.candidate_score(control, bern, index, dx, dy) - current
            if lam > 0.0:
                axis = 0 if dx != 0.0 else 1
                step = dx if dx != 0.0 else dy
                gain -= lam * _tv_delta(control, index, axis, step).ravel()
            better = gain > best_gain  # strict: ties keep the earlier slot
            best_gain = np.where(better, gain, best_gain)
            best_slot = np.where(better, slot, best_slot)
            slot += 1

    take = (best_slot >= 0) & active.ravel()
    if not take.any():
        return 0
    rows = ws.base_y.astype(np.int64)
    cols = ws.base_x.astype(np.int64)
    for index in range(n):
        for m, (sx, sy) in enumerate(_MOVES):
            hit = take & (best_slot == index * len(_MOVES) + m)
            if not hit.any():
                continue
            axis = 0 if sx != 0.0 else 1
            step = (sx + sy) * delta
            control[index, rows[hit], cols[hit], axis] += step
    return int(take.sum())


def refine_step(
    field: bezier.BezierField,
    pyramids: Sequence[correlation.CorrelationVolumePyramid],
    delta: float,
    config: EstimatorConfig,
) -> tuple[bezier.BezierField, int]:
    """Apply one pattern-search iteration at step size ``delta``.

    Without smoothing every pixel updates independently in one pass; with a
    positive smoothness weight the pass splits into checkerboard halves so a
    moving pixel never races its neighbors.
    """
    if delta <= 0.0:
        raise ValueError(f"step must be positive, got {delta}")
    ws = _Workspace(pyramids)
    bern = ws.bernstein(field.degree)
    control = field.control_points.copy()

    ys, xs = np.mgrid[0 : ws.height, 0 : ws.width]
    if config.smooth_weight > 0.0:
        accepted = 0
        for parity in (0, 1):
            active = ((ys + xs) % 2 == parity)
            accepted += _sweep(ws, control, bern, delta, config.smooth_weight, active)
    else:
        active = np.ones((ws.height, ws.width), dtype=bool)
        accepted = _sweep(ws, control, bern, delta, 0.0, active)
    return bezier.BezierField(control), accepted


def _clamp_levels(levels: int, height: int, width: int) -> int:
    usable = 1
    while (
        usable < levels
        and height % (2 ** usable) == 0
        and width % (2 ** usable) == 0
    ):
        usable += 1
    return usable


def build_view_pyramids(
    views: ev.ViewSet,
    config: EstimatorConfig,
    frames: tuple[np.ndarray, np.ndarray] | None = None,
) -> list[correlation.CorrelationVolumePyramid]:
    """Correlate the reference view against every later view (and frame pair).

    The reference is the earliest view; each other view yields one volume
    tagged with that view's normalized time. Intermediate views get the
    shallow pyramid, the final view the deep one. With ``use_images`` the
    frame pair contributes an extra volume at tau = 1.
    """
    ref_feat = correlation.extract_features(views.views[0].grid, config.downsample)
    pyramids = []
    last = len(views.views) - 1
    for i, view in enumerate(views.views[1:], start=1):
        feat = correlation.extract_features(view.grid, config.downsample)
        volume = correlation.build_correlation_volume(
            ref_feat, feat, max_bytes=config.volume_budget_bytes
        )
        levels = config.levels_target if i == last else config.levels_intermediate
        levels = _clamp_levels(levels, feat.height, feat.width)
        pyramids.append(correlation.build_pyramid(volume, levels, tau=view.tau))

    if config.use_images:
        if frames is None:
            raise ValueError("use_images requires a (reference, target) frame pair")
        ref_img, tgt_img = frames
        fr = correlation.extract_features(np.asarray(ref_img, dtype=np.float64), config.downsample)
        ft = correlation.extract_features(np.asarray(tgt_img, dtype=np.float64), config.downsample)
        if (fr.height, fr.width) != (ref_feat.height, ref_feat.width):
            raise ValueError("frame resolution does not match the event resolution")
        volume = correlation.build_correlation_volume(
            fr, ft, max_bytes=config.volume_budget_bytes
        )
        levels = _clamp_levels(config.levels_image, ft.height, ft.width)
        pyramids.append(correlation.build_pyramid(volume, levels, tau=1.0))
    return pyramids


def estimate_flow(
    events: ev.EventStream,
    t_ref: float,
    t_target: float,
    config: EstimatorConfig | None = None,
    frames: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[bezier.BezierField, ObjectiveReport]:
    """Estimate a dense full-resolution trajectory field from an event stream.

    Builds the multi-view voxel representation, correlates features, runs the
    configured number of pattern-search iterations with geometrically
    decaying steps, and upsamples the feature-grid field back to sensor
    resolution. Deterministic: same inputs and config, same bits out.
    """
    config = config or EstimatorConfig()
    if len(events) == 0 or not np.any(events.p != 0):
        warnings.warn("event stream is empty; returning the zero field", RuntimeWarning)
        zero = bezier.BezierField.zeros(config.degree, events.height, events.width)
        report = ObjectiveReport(
            score=np.zeros((events.height, events.width)), degenerate=True
        )
        return zero, report

    views = ev.build_views(
        events,
        t_ref,
        t_target,
        corr_bins=config.corr_bins,
        context_bins=config.context_bins,
        stride=config.view_stride,
        count=config.view_count,
        budget_bytes=config.grid_budget_bytes,
    )
    pyramids = build_view_pyramids(views, config, frames)

    ws = _Workspace(pyramids)
    bern = ws.bernstein(config.degree)
    control = np.zeros((config.degree, ws.height, ws.width, 2))
    lam = config.smooth_weight

    report = ObjectiveReport(score=np.zeros((ws.height, ws.width)))
    report.trace.append(_objective_mean(ws, control, bern, lam))
    coarse = bezier.BezierField(control)
    for k in range(config.iterations):
        delta = config.step_px * config.step_decay**k
        coarse, accepted = refine_step(coarse, pyramids, delta, config)
        report.accepted.append(accepted)
        report.trace.append(
            _objective_mean(ws, coarse.control_points, bern, lam)
        )

    report.score = ws.correlation_score(coarse.control_points, bern).reshape(
        ws.height, ws.width
    )
    full = bezier.upsample_convex(coarse, config.downsample)
    if (full.height, full.width) != (events.height, events.width):
        full = bezier.BezierField(
            full.control_points[:, : events.height, : events.width, :]
        )
    return full, report
