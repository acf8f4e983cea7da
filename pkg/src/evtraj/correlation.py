"""Hand-crafted features, all-pairs correlation volumes, and trajectory lookups.

Feature maps are built from block statistics instead of a learned encoder:
every ``s x s`` cell keeps the per-channel block mean plus the block means of
the horizontal and vertical finite-difference magnitudes, then the resulting
vector is L2-normalized (cells with no support stay exactly zero). Dot
products between unit cells land in [-1, 1], so correlation values read as
cosine similarity.

A correlation volume stores every pairwise cell similarity between a
reference map and another view, ``C[i, j, k, l] = <ref(i, j), other(k, l)>``.
Volumes are O((H'W')^2) floats; ``estimate_volume_bytes`` reports the cost up
front and the builder refuses to exceed its budget. Pyramids average-pool
the *other* view's two axes so coarse levels see displacements at half
resolution per level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bezier import BezierField
from .events import VoxelGrid

DEFAULT_VOLUME_BUDGET_BYTES = 2 << 30


class VolumeMemoryError(MemoryError):
    """Raised when a correlation volume would exceed the configured budget."""


@dataclass(frozen=True)
class FeatureMap:
    """Per-cell unit feature vectors, ``values`` shaped (channels, H', W')."""

    values: np.ndarray
    source: str = "events"
    downsample: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise ValueError(f"features must be (channels, H', W'), got {values.shape}")
        if self.downsample < 1:
            raise ValueError(f"downsample factor must be >= 1, got {self.downsample}")
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class CorrelationVolumePyramid:
    """Average-pooled levels of one correlation volume, tagged with its view time."""

    levels: tuple[np.ndarray, ...]
    tau: float

    def __post_init__(self):
        if not self.levels:
            raise ValueError("a pyramid needs at least one level")
        if not 0.0 <= float(self.tau) <= 1.0:
            raise ValueError(f"view tau must lie in [0, 1], got {self.tau}")
        object.__setattr__(self, "levels", tuple(self.levels))

    @property
    def level_count(self) -> int:
        return len(self.levels)

    @property
    def base_shape(self) -> tuple[int, ...]:
        return self.levels[0].shape


def extract_features(
    source, factor: int, source_tag: str | None = None
) -> FeatureMap:
    """Block-statistics features for a voxel grid or a grayscale image.

    ``source`` is a :class:`VoxelGrid`, a 2-D image, or a (channels, H, W)
    array. Inputs whose spatial size is not divisible by ``factor`` are
    reflect-padded up to the next multiple. Output channels are, in order,
    the per-channel block means, the block means of |horizontal diff|, and
    the block means of |vertical diff|, giving 3x the input channels, then
    each cell is normalized to unit length (all-zero cells are left alone).
    """
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    if isinstance(source, VoxelGrid):
        data = source.values
        tag = source_tag or "events"
    else:
        data = np.asarray(source, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise ValueError(f"expected a 2-D image or (C, H, W) array, got {data.shape}")
        tag = source_tag or "image"

    data = np.asarray(data, dtype=np.float64)
    _, h, w = data.shape
    pad_h = (-h) % factor
    pad_w = (-w) % factor
    if pad_h or pad_w:
        data = np.pad(data, ((0, 0), (0, pad_h), (0, pad_w)), mode="reflect")

    # Forward differences, zero-padded back to the input size so a constant
    # input yields exactly zero gradient channels.
    gx = np.zeros_like(data)
    gx[:, :, :-1] = np.abs(data[:, :, 1:] - data[:, :, :-1])
    gy = np.zeros_like(data)
    gy[:, :-1, :] = np.abs(data[:, 1:, :] - data[:, :-1, :])

    feats = np.concatenate(
        [_block_mean(data, factor), _block_mean(gx, factor), _block_mean(gy, factor)]
    )
    norms = np.sqrt(np.sum(feats * feats, axis=0, keepdims=True))
    nonzero = norms > 0.0
    feats = np.divide(feats, norms, out=np.zeros_like(feats), where=nonzero)
    return FeatureMap(feats.astype(np.float32), source=tag, downsample=factor)


def _block_mean(data: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = data.shape
    return data.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def estimate_volume_bytes(ref: FeatureMap, other: FeatureMap) -> int:
    """float32 bytes the all-pairs volume between two maps would occupy."""
    return 4 * ref.height * ref.width * other.height * other.width


def build_correlation_volume(
    ref: FeatureMap,
    other: FeatureMap,
    max_bytes: int = DEFAULT_VOLUME_BUDGET_BYTES,
) -> np.ndarray:
    """All-pairs cosine similarities, shaped (H', W', H', W') float32."""
    if ref.values.shape != other.values.shape:
        raise ValueError(
            f"feature shapes differ: {ref.values.shape} vs {other.values.shape}"
        )
    needed = estimate_volume_bytes(ref, other)
    if needed > max_bytes:
        raise VolumeMemoryError(
            f"correlation volume needs {needed} bytes, budget is {max_bytes}"
        )
    vol = np.tensordot(ref.values, other.values, axes=([0], [0]))
    return vol.astype(np.float32, copy=False)


def build_pyramid(volume: np.ndarray, levels: int, tau: float) -> CorrelationVolumePyramid:
    """Average-pool the last two axes ``levels - 1`` times.

    The lookup axes must be divisible by ``2 ** (levels - 1)``; callers pad
    their feature maps if they are not. Pooling preserves the mean of each
    2x2 block, so the overall volume mean is identical at every level.
    """
    volume = np.asarray(volume)
    if volume.ndim != 4:
        raise ValueError(f"volume must be 4-D, got shape {volume.shape}")
    if levels < 1:
        raise ValueError(f"need at least one level, got {levels}")
    out = [volume]
    current = volume
    for level in range(1, levels):
        h, w = current.shape[2], current.shape[3]
        if h % 2 or w % 2:
            raise ValueError(
                f"level {level - 1} lookup axes {h}x{w} are not divisible by 2; "
                "pad the feature maps before building the pyramid"
            )
        pooled = current.reshape(*current.shape[:2], h // 2, 2, w // 2, 2).mean(axis=(3, 5))
        pooled = pooled.astype(np.float32, copy=False)
        out.append(pooled)
        current = pooled
    return CorrelationVolumePyramid(levels=tuple(out), tau=float(tau))


def bilinear_gather(volumes: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Bilinearly sample per-pixel 2-D maps, reading 0 outside their bounds.

    ``volumes`` is (P, h, w): one small map per reference pixel. ``rows`` and
    ``cols`` are broadcastable to (P, K) fractional coordinates into that
    pixel's own map. Returns (P, K) float64.
    """
    p, h, w = volumes.shape
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    rows, cols = np.broadcast_arrays(rows, cols)
    if rows.ndim == 1:
        rows = rows[:, None]
        cols = cols[:, None]
    rows = np.broadcast_to(rows, (p, rows.shape[1]))
    cols = np.broadcast_to(cols, (p, cols.shape[1]))

    r0 = np.floor(rows)
    c0 = np.floor(cols)
    fr = rows - r0
    fc = cols - c0
    r0 = r0.astype(np.int64)
    c0 = c0.astype(np.int64)

    out = np.zeros(rows.shape, dtype=np.float64)
    pix = np.arange(p)[:, None]
    for dr, dc, wgt in (
        (0, 0, (1.0 - fr) * (1.0 - fc)),
        (0, 1, (1.0 - fr) * fc),
        (1, 0, fr * (1.0 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        good = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        sample = volumes[pix, np.clip(rr, 0, h - 1), np.clip(cc, 0, w - 1)]
        out += wgt * np.where(good, sample, 0.0)
    return out


def lookup(
    pyramids: Sequence[CorrelationVolumePyramid],
    field: BezierField,
    radius: int,
) -> np.ndarray:
    """Sample correlation around each pixel's predicted position in every view.

    For reference pixel ``x`` and a view tagged ``tau``, the center is
    ``x + B(tau, x)``; a ``(2r+1)^2`` grid of integer offsets around it is
    sampled bilinearly at every pyramid level (coordinates divided by 2 per
    level, reads outside the volume give 0). Results are concatenated over
    offsets, levels, and views into (H', W', V * L * (2r+1)^2) float32.
    """
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if not pyramids:
        raise ValueError("need at least one correlation pyramid")
    h, w = field.height, field.width
    for pyr in pyramids:
        if pyr.base_shape[:2] != (h, w):
            raise ValueError(
                f"pyramid reference axes {pyr.base_shape[:2]} do not match the "
                f"field resolution {(h, w)}"
            )

    p = h * w
    base_r = np.repeat(np.arange(h), w).astype(np.float64)
    base_c = np.tile(np.arange(w), h).astype(np.float64)
    span = np.arange(-radius, radius + 1, dtype=np.float64)
    off_r = np.repeat(span, span.size)  # row-major offset order
    off_c = np.tile(span, span.size)

    chunks = []
    for pyr in pyramids:
        flow = field.evaluate(pyr.tau).values.reshape(p, 2)
        center_r = base_r + flow[:, 1]
        center_c = base_c + flow[:, 0]
        for level, vol in enumerate(pyr.levels):
            scale = float(2**level)
            rows = center_r[:, None] / scale + off_r[None, :]
            cols = center_c[:, None] / scale + off_c[None, :]
            taps = bilinear_gather(vol.reshape(p, *vol.shape[2:]), rows, cols)
            chunks.append(taps.astype(np.float32))
    return np.concatenate(chunks, axis=1).reshape(h, w, -1)
