"""Dense per-pixel Bezier trajectory fields.

A trajectory field stores one displacement curve per pixel as Bernstein
control points. The zeroth control point is pinned to the origin, so a field
of degree ``n`` keeps ``n`` control-point maps and the curve value at 0 is
identically zero. Displacements are ``(dx, dy)`` in the pixel units of the
grid the field lives on; :func:`upsample_convex` moves a field to a finer
grid and rescales the displacements accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import comb


def bernstein_weights(degree: int, tau: float) -> np.ndarray:
    """Bernstein basis values ``C(n,i) (1-tau)^(n-i) tau^i`` for i = 0..n.

    Exact at the endpoints: tau=0 puts unit weight on index 0, tau=1 on
    index n. The weights are non-negative and sum to 1.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 0:
        raise ValueError(f"degree must be a non-negative integer, got {degree!r}")
    tau = float(tau)
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    i = np.arange(degree + 1)
    # np.power(0.0, 0) == 1.0, so the endpoint cases need no special casing.
    return comb(degree, i) * np.power(1.0 - tau, degree - i) * np.power(tau, i)


@dataclass(frozen=True)
class FlowMap:
    """Per-pixel displacement map ``values[y, x] = (dx, dy)``.

    ``tau`` records the normalized curve time the map was sampled at and
    ``valid``, when present, marks pixels that carry a meaningful value.
    """

    values: np.ndarray
    tau: float = 1.0
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[-1] != 2:
            raise ValueError(f"flow values must have shape (H, W, 2), got {values.shape}")
        object.__setattr__(self, "values", values)
        if not 0.0 <= float(self.tau) <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.valid is not None:
            valid = np.asarray(self.valid, dtype=bool)
            if valid.shape != values.shape[:2]:
                raise ValueError(
                    f"valid mask shape {valid.shape} does not match flow {values.shape[:2]}"
                )
            object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class BezierField:
    """Per-pixel trajectory field, ``control_points[i-1, y, x] = P_i``."""

    control_points: np.ndarray

    def __post_init__(self):
        ctrl = np.asarray(self.control_points, dtype=np.float64)
        if ctrl.ndim != 4 or ctrl.shape[-1] != 2:
            raise ValueError(
                f"control points must have shape (degree, H, W, 2), got {ctrl.shape}"
            )
        if ctrl.shape[0] < 1:
            raise ValueError("a trajectory field needs degree >= 1")
        object.__setattr__(self, "control_points", ctrl)

    @classmethod
    def zeros(cls, degree: int, height: int, width: int) -> "BezierField":
        if degree < 1:
            raise ValueError(f"degree must be >= 1, got {degree}")
        return cls(np.zeros((degree, height, width, 2)))

    @property
    def degree(self) -> int:
        return self.control_points.shape[0]

    @property
    def height(self) -> int:
        return self.control_points.shape[1]

    @property
    def width(self) -> int:
        return self.control_points.shape[2]

    def evaluate(self, tau: float) -> FlowMap:
        """Sample every pixel's curve at ``tau``.

        tau=0 gives an exactly zero map (the origin control point is
        implicit) and tau=1 reproduces the last control-point map bit for
        bit, because all other Bernstein weights vanish there.
        """
        weights = bernstein_weights(self.degree, tau)[1:]
        values = np.tensordot(weights, self.control_points, axes=(0, 0))
        return FlowMap(values, tau=float(tau))


def evaluate_field(field: BezierField, tau: float) -> FlowMap:
    return field.evaluate(tau)


def apply_update(field: BezierField, deltas: np.ndarray) -> BezierField:
    """Return a new field with ``deltas`` added to every control point."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.shape != field.control_points.shape:
        raise ValueError(
            f"delta shape {deltas.shape} does not match field {field.control_points.shape}"
        )
    return BezierField(field.control_points + deltas)


def bilinear_upsample_weights(height: int, width: int, factor: int) -> np.ndarray:
    """Default convex weights: bilinear interpolation as a 3x3 stencil.

    Every fine pixel center is projected into the coarse grid; the two
    nearest coarse cells per axis always sit inside the 3x3 neighborhood of
    the fine pixel's parent cell, so bilinear interpolation is one convex
    combination per output pixel. At factor 1 the stencil collapses to the
    identity (all weight on the center).
    """

    def axis_weights(n_coarse: int) -> np.ndarray:
        out = np.zeros((n_coarse * factor, 3))
        fine = np.arange(n_coarse * factor)
        parent = fine // factor
        coord = (fine + 0.5) / factor - 0.5
        low = np.floor(coord).astype(int)
        frac = coord - low
        a0 = low - parent + 1  # offset of `low` inside the 3-cell stencil
        out[fine, a0] = 1.0 - frac
        out[fine, a0 + 1] = frac
        return out

    wy = axis_weights(height)
    wx = axis_weights(width)
    return wy[:, None, :, None] * wx[None, :, None, :]


def upsample_convex(
    field: BezierField, factor: int, weights: np.ndarray | None = None
) -> BezierField:
    """Upsample a field by ``factor`` with per-pixel 3x3 convex combinations.

    Each output pixel blends the 3x3 coarse neighborhood of its parent cell
    (edges clamped) and the blended displacement is multiplied by ``factor``
    to convert it into fine-grid pixel units. ``weights`` may supply an
    externally computed stack of shape ``(H*factor, W*factor, 3, 3)``; rows
    must be non-negative and sum to 1 within 1e-6. Without it, bilinear
    weights are used.
    """
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    n, h, w = field.degree, field.height, field.width
    if weights is None:
        weights = bilinear_upsample_weights(h, w, factor)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (h * factor, w * factor, 3, 3):
            raise ValueError(
                f"weights must have shape {(h * factor, w * factor, 3, 3)}, got {weights.shape}"
            )
        if np.any(weights < 0.0):
            raise ValueError("convex upsampling weights must be non-negative")
        sums = weights.sum(axis=(2, 3))
        if np.max(np.abs(sums - 1.0)) > 1e-6:
            raise ValueError("convex upsampling weights must sum to 1 per output pixel")

    parent_y = np.arange(h * factor) // factor
    parent_x = np.arange(w * factor) // factor
    # Clamped coarse row/col index for each stencil offset.
    rows = np.clip(parent_y[:, None] + np.arange(-1, 2)[None, :], 0, h - 1)
    cols = np.clip(parent_x[:, None] + np.arange(-1, 2)[None, :], 0, w - 1)

    patches = field.control_points[:, rows[:, None, :, None], cols[None, :, None, :], :]
    values = np.einsum("hwab,nhwabc->nhwc", weights, patches) * float(factor)
    return BezierField(values)


def fit_bezier_to_samples(
    samples: Sequence[tuple[float, np.ndarray]], degree: int
) -> BezierField:
    """Least-squares control points from displacement maps sampled at known taus.

    ``samples`` is a sequence of ``(tau, values)`` with tau in (0, 1] and
    values shaped (H, W, 2). The origin control point is pinned at zero, so
    the basis has ``degree`` columns; at least ``degree`` distinct taus are
    required and duplicates make the system rank deficient.
    """
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    if len(samples) < degree:
        raise ValueError(
            f"need at least {degree} samples to fit degree {degree}, got {len(samples)}"
        )
    taus = np.array([float(t) for t, _ in samples])
    if np.any(taus <= 0.0) or np.any(taus > 1.0):
        raise ValueError("sample taus must lie in (0, 1]")
    if np.unique(taus).size < degree:
        raise ValueError("duplicate taus make the Bernstein basis rank deficient")

    maps = [np.asarray(v, dtype=np.float64) for _, v in samples]
    shape = maps[0].shape
    if any(m.shape != shape for m in maps) or len(shape) != 3 or shape[-1] != 2:
        raise ValueError("all sample maps must share one (H, W, 2) shape")

    basis = np.stack([bernstein_weights(degree, t)[1:] for t in taus])  # (K, n)
    rhs = np.stack([m.reshape(-1) for m in maps])  # (K, H*W*2)
    solution, _, rank, _ = np.linalg.lstsq(basis, rhs, rcond=None)
    if rank < degree:
        raise ValueError("Bernstein basis is rank deficient for the given taus")
    return BezierField(solution.reshape(degree, *shape))
