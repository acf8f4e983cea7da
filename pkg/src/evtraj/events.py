"""Event streams and their voxel-grid views.

An event camera reports per-pixel brightness changes as tuples
``(x, y, t, p)`` with microsecond timestamps and polarity +-1. This module
turns such streams into the dense tensors the correlation stage consumes:

* a base voxel grid whose bins cover both a pre-reference window (so the
  reference time has temporal context behind it) and the trajectory window
  between the reference and target times,
* a context sub-grid holding the trajectory-window bins, and
* a sliding family of correlation views, each spanning the same number of
  bins and tagged with the normalized time of its last bin.

Events are splatted only along time: integer pixel coordinates land in their
own cell, and a triangular kernel splits each polarity between the two
nearest bins so total deposited mass equals the polarity sum of the events
inside the window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_GRID_BUDGET_BYTES = 1 << 30


class GridMemoryError(MemoryError):
    """Raised when a requested voxel grid would exceed the memory budget."""


@dataclass(frozen=True)
class EventStream:
    """Column-wise event storage, sorted by timestamp.

    ``x``/``y`` are pixel coordinates inside a ``width`` x ``height`` raster,
    ``t`` is int64 microseconds (non-decreasing) and ``p`` is +-1.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.int64)
        y = np.asarray(self.y, dtype=np.int64)
        t = np.asarray(self.t, dtype=np.int64)
        p = np.asarray(self.p, dtype=np.int64)
        if not (x.shape == y.shape == t.shape == p.shape) or x.ndim != 1:
            raise ValueError("event columns must be 1-D arrays of equal length")
        if self.width < 1 or self.height < 1:
            raise ValueError("raster dimensions must be positive")
        if x.size:
            if x.min() < 0 or x.max() >= self.width or y.min() < 0 or y.max() >= self.height:
                raise ValueError("event coordinates fall outside the raster")
            if np.any(np.diff(t) < 0):
                raise ValueError("event timestamps must be non-decreasing")
            if not np.all(np.abs(p) == 1):
                raise ValueError("event polarity must be +1 or -1")
        for name, col in (("x", x), ("y", y), ("t", t), ("p", p)):
            object.__setattr__(self, name, col)

    def __len__(self) -> int:
        return int(self.x.size)

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, width, height)


@dataclass(frozen=True)
class VoxelGrid:
    """Dense (bins, height, width) event tensor with uniform bin times."""

    values: np.ndarray
    t_start: float
    t_end: float
    bin_timestamps: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        stamps = np.asarray(self.bin_timestamps, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError(f"voxel values must be (bins, H, W), got {values.shape}")
        if stamps.shape != (values.shape[0],):
            raise ValueError("one timestamp per bin is required")
        if stamps.size >= 2:
            gaps = np.diff(stamps)
            if np.max(np.abs(gaps - gaps[0])) > 1e-6 * max(abs(gaps[0]), 1.0):
                raise ValueError("bin timestamps must be uniformly spaced")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bin_timestamps", stamps)

    @property
    def bins(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class View:
    """One correlation view: a voxel grid plus the normalized time of its last bin."""

    grid: VoxelGrid
    tau: float


@dataclass(frozen=True)
class ViewSet:
    """Context grid plus ordered correlation views; view 0 ends at the reference time."""

    context: VoxelGrid
    views: tuple[View, ...]
    reference_index: int = 0


def normalize_event_time(t, t_start: float, t_end: float, bins: int):
    """Map timestamps to fractional bin coordinates in [0, bins - 1].

    The first bin sits at ``t_start`` and the last at ``t_end``; timestamps
    outside the closed window are rejected.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    if not t_end > t_start:
        raise ValueError(f"degenerate window: t_start={t_start}, t_end={t_end}")
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < t_start) or np.any(t > t_end):
        raise ValueError("timestamps fall outside the normalization window")
    out = (bins - 1) * (t - t_start) / (t_end - t_start)
    return float(out) if out.ndim == 0 else out


def build_base_voxel_grid(
    events: EventStream,
    t_ref: float,
    t_target: float,
    corr_bins: int,
    context_bins: int,
    budget_bytes: int = DEFAULT_GRID_BUDGET_BYTES,
) -> VoxelGrid:
    """Accumulate events into the base grid spanning both windows.

    With ``corr_bins`` = M and ``context_bins`` = N the grid has M + N - 1
    bins spaced ``dt = (t_target - t_ref) / (N - 1)``; bin M - 1 falls exactly
    on the reference time and the window opens at ``t_ref - dt * (M - 1)``.
    Events inside the closed window split their polarity between the two
    nearest bins (triangular kernel); everything else is ignored. Reference-
    side bins that reach before the recording simply stay empty.
    """
    if corr_bins < 2 or context_bins < 2:
        raise ValueError("corr_bins and context_bins must both be >= 2")
    if not t_target > t_ref:
        raise ValueError(f"t_target ({t_target}) must be greater than t_ref ({t_ref})")

    total_bins = corr_bins + context_bins - 1
    needed = total_bins * events.height * events.width * 8
    if needed > budget_bytes:
        raise GridMemoryError(
            f"voxel grid of {total_bins}x{events.height}x{events.width} needs "
            f"{needed} bytes, budget is {budget_bytes}"
        )

    dt = (t_target - t_ref) / (context_bins - 1)
    t_start = t_ref - dt * (corr_bins - 1)
    grid = np.zeros((total_bins, events.height, events.width))

    t = events.t.astype(np.float64)
    inside = (t >= t_start) & (t <= t_target)
    if np.any(inside):
        tau = (total_bins - 1) * (t[inside] - t_start) / (t_target - t_start)
        lo = np.floor(tau).astype(np.int64)
        frac = tau - lo
        x = events.x[inside]
        y = events.y[inside]
        p = events.p[inside].astype(np.float64)
        np.add.at(grid, (lo, y, x), (1.0 - frac) * p)
        up = frac > 0.0  # lo + 1 is only touched with a non-zero share
        np.add.at(grid, (lo[up] + 1, y[up], x[up]), frac[up] * p[up])

    stamps = t_start + dt * np.arange(total_bins)
    return VoxelGrid(grid, t_start=t_start, t_end=float(t_target), bin_timestamps=stamps)


def extract_context_grid(base: VoxelGrid, corr_bins: int, context_bins: int) -> VoxelGrid:
    """Trajectory-window bins [corr_bins - 1, end]; bin 0 is the reference bin."""
    _check_bin_split(base, corr_bins, context_bins)
    values = base.values[corr_bins - 1 :].copy()
    stamps = base.bin_timestamps[corr_bins - 1 :].copy()
    return VoxelGrid(values, t_start=float(stamps[0]), t_end=base.t_end, bin_timestamps=stamps)


def extract_correlation_views(
    base: VoxelGrid, corr_bins: int, context_bins: int, stride: int, count: int
) -> ViewSet:
    """Slide a ``corr_bins``-wide window over the base grid.

    View ``i`` starts at bin ``i * stride`` and is tagged with
    ``tau = i * stride / (context_bins - 1)``, the normalized time of its
    last bin: view 0 ends at the reference time (tau 0) and a view ending on
    the final bin carries tau 1.
    """
    _check_bin_split(base, corr_bins, context_bins)
    if count < 2:
        raise ValueError(f"need at least 2 views (reference + lookup), got {count}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if (count - 1) * stride > context_bins - 1:
        raise ValueError(
            f"{count} views at stride {stride} overrun the base grid "
            f"({base.bins} bins, window {corr_bins})"
        )

    views = []
    for i in range(count):
        first = i * stride
        values = base.values[first : first + corr_bins].copy()
        stamps = base.bin_timestamps[first : first + corr_bins].copy()
        grid = VoxelGrid(
            values, t_start=float(stamps[0]), t_end=float(stamps[-1]), bin_timestamps=stamps
        )
        views.append(View(grid=grid, tau=(i * stride) / (context_bins - 1)))
    context = extract_context_grid(base, corr_bins, context_bins)
    return ViewSet(context=context, views=tuple(views), reference_index=0)


def build_views(
    events: EventStream,
    t_ref: float,
    t_target: float,
    corr_bins: int,
    context_bins: int,
    stride: int,
    count: int,
    budget_bytes: int = DEFAULT_GRID_BUDGET_BYTES,
) -> ViewSet:
    """Convenience pipeline: base grid then correlation views."""
    base = build_base_voxel_grid(
        events, t_ref, t_target, corr_bins, context_bins, budget_bytes=budget_bytes
    )
    return extract_correlation_views(base, corr_bins, context_bins, stride, count)


def _check_bin_split(base: VoxelGrid, corr_bins: int, context_bins: int) -> None:
    if corr_bins < 2 or context_bins < 2:
        raise ValueError("corr_bins and context_bins must both be >= 2")
    if base.bins != corr_bins + context_bins - 1:
        raise ValueError(
            f"base grid has {base.bins} bins, expected {corr_bins + context_bins - 1}"
        )
