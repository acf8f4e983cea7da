"""Synthetic sequences with dense continuous-time ground truth.

A scene is a textured background plus a few alpha-masked sprites, each moving
along its own similarity trajectory (translation in pixels, rotation in
degrees, scale as a positive factor). Trajectories are cubic splines through
a handful of control points produced by a second-order random process: the
next control value mixes a constant-velocity extrapolation with a bounded
random step, and per-object / per-component freeze coin flips keep some
components constant. Frames are rendered by inverse-warp bilinear sampling
with back-to-front alpha compositing, events come from a noise-free
threshold-crossing simulation on log intensity, and ground truth stores, for
every pixel owned by an object at the reference time, the displacement of
that object's material point at later times, whether or not it stays visible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .bezier import FlowMap
from .events import EventStream

#: Absolute slack on log-intensity threshold comparisons. Exact-threshold
#: steps must emit even after an intensity/log round trip perturbs the values
#: by a few ulps; anything a pixel is genuinely dimmer than stays silent.
THRESHOLD_SLACK = 1e-9

_LOG_EPS = 1e-3
_MIN_SCALE = 0.02
_LUMA = np.array([0.299, 0.587, 0.114])

COMPONENTS = ("translation", "rotation", "scale")


@dataclass(frozen=True)
class MotionParams:
    """Random-process knobs for one trajectory component of one layer.

    ``alpha`` freezes the whole layer (drawn once per object), ``beta``
    freezes just this component, ``gamma`` bounds the deterministic share of
    each step, and ``theta`` bounds the random step (pixels for translation,
    degrees for rotation, relative factor for scale).
    """

    alpha: float
    beta: float
    gamma: float
    theta: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.theta < 0.0:
            raise ValueError(f"theta must be >= 0, got {self.theta}")


BG_MOTION_DEFAULTS: dict[str, MotionParams] = {
    "translation": MotionParams(alpha=0.1, beta=0.0, gamma=0.8, theta=30.0),
    "rotation": MotionParams(alpha=0.1, beta=0.7, gamma=0.6, theta=10.0),
    "scale": MotionParams(alpha=0.1, beta=0.4, gamma=0.3, theta=0.15),
}

FG_MOTION_DEFAULTS: dict[str, MotionParams] = {
    "translation": MotionParams(alpha=0.0, beta=0.0, gamma=0.9, theta=120.0),
    "rotation": MotionParams(alpha=0.0, beta=0.3, gamma=0.6, theta=30.0),
    "scale": MotionParams(alpha=0.0, beta=0.3, gamma=0.3, theta=0.30),
}


def constant_velocity_step(
    x_prev: np.ndarray | float, x_curr: np.ndarray | float, t_prev: float, t_curr: float, t_next: float
):
    """Extrapolate the last control-point velocity to the next control time."""
    if not t_prev < t_curr < t_next:
        raise ValueError("control times must be strictly increasing")
    ratio = (t_next - t_curr) / (t_curr - t_prev)
    return x_curr + ratio * (np.asarray(x_curr) - np.asarray(x_prev))


def stochastic_scale_step(x: float, delta0: float, delta1: int) -> float:
    """Multiplicative scale step: grow by (1 + delta0) or shrink by its inverse."""
    return float(x) * (1.0 + delta0) ** (2 * delta1 - 1)


@dataclass(frozen=True)
class SimilarityTrajectory:
    """Control points of one object's motion plus their spline interpolation.

    ``times`` must be strictly increasing; evaluation outside the control
    range is an error. ``scale`` must stay positive along the whole spline,
    not only at the control points.
    """

    times: np.ndarray
    tx: np.ndarray
    ty: np.ndarray
    rot_deg: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        if times.ndim != 1 or times.size < 2:
            raise ValueError("need at least two control times")
        if np.any(np.diff(times) <= 0):
            raise ValueError("control times must be strictly increasing")
        object.__setattr__(self, "times", times)
        for name in ("tx", "ty", "rot_deg", "scale"):
            col = np.asarray(getattr(self, name), dtype=np.float64)
            if col.shape != times.shape:
                raise ValueError(f"{name} must match the control times in length")
            object.__setattr__(self, name, col)
        splines = {
            name: CubicSpline(times, getattr(self, name), bc_type="natural")
            for name in ("tx", "ty", "rot_deg", "scale")
        }
        object.__setattr__(self, "_splines", splines)
        dense = np.linspace(times[0], times[-1], max(4 * times.size, 64))
        if np.min(splines["scale"](dense)) <= 0.0:
            raise ValueError("scale spline dips to zero or below inside the control range")

    @classmethod
    def identity(cls, t_start: float = 0.0, t_end: float = 1.0) -> "SimilarityTrajectory":
        t = np.array([t_start, t_end])
        z = np.zeros(2)
        return cls(times=t, tx=z, ty=z, rot_deg=z, scale=np.ones(2))

    def transform_at(self, t):
        """Interpolated (tx, ty, rot_deg, scale) at time ``t``."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise ValueError(
                f"time {t} outside the control range "
                f"[{self.times[0]}, {self.times[-1]}]"
            )
        sp = self._splines
        return (
            float(sp["tx"](t)) if t.ndim == 0 else sp["tx"](t),
            float(sp["ty"](t)) if t.ndim == 0 else sp["ty"](t),
            float(sp["rot_deg"](t)) if t.ndim == 0 else sp["rot_deg"](t),
            float(sp["scale"](t)) if t.ndim == 0 else sp["scale"](t),
        )

    def control_dict(self) -> dict[str, list[float]]:
        return {
            "times": self.times.tolist(),
            "tx": self.tx.tolist(),
            "ty": self.ty.tolist(),
            "rot_deg": self.rot_deg.tolist(),
            "scale": self.scale.tolist(),
        }


def interpolate_spline(trajectory: SimilarityTrajectory, t):
    return trajectory.transform_at(t)


def sample_control_points(
    rng: np.random.Generator,
    params: Mapping[str, MotionParams],
    max_resample: int = 200,
) -> SimilarityTrajectory:
    """Draw one object's control points from the second-order random process.

    Draw order is fixed for reproducibility: K (3 or 4, even odds), interior
    control times, the per-object freeze flag, then per component a freeze
    flag and a deterministic-share draw, then the per-step randomness. The
    first step has no velocity history, so its deterministic branch is just
    the current value. The scale component is redrawn until its spline stays
    positive.
    """
    missing = [c for c in COMPONENTS if c not in params]
    if missing:
        raise ValueError(f"missing motion params for {missing}")
    alphas = {params[c].alpha for c in COMPONENTS}
    if len(alphas) != 1:
        raise ValueError("the per-object freeze probability must match across components")

    k = int(rng.integers(3, 5))
    times = _sample_control_times(rng, k)
    frozen_object = bool(rng.random() < params["translation"].alpha)

    draws = {}
    for comp in COMPONENTS:
        p = params[comp]
        draws[comp] = {
            "frozen": frozen_object or bool(rng.random() < p.beta),
            "det_share": float(rng.uniform(0.0, p.gamma)),
        }

    tx_ty = _walk_additive(rng, times, np.zeros(2), params["translation"], draws["translation"])
    rot = _walk_additive(rng, times, np.zeros(1), params["rotation"], draws["rotation"])

    for attempt in range(max_resample):
        scale = _walk_scale(rng, times, params["scale"], draws["scale"])
        try:
            return SimilarityTrajectory(
                times=times,
                tx=tx_ty[:, 0],
                ty=tx_ty[:, 1],
                rot_deg=rot[:, 0],
                scale=scale,
            )
        except ValueError:
            continue  # scale spline went non-positive, redraw it
    raise RuntimeError(f"could not sample a positive scale trajectory in {max_resample} tries")


def _sample_control_times(rng: np.random.Generator, k: int) -> np.ndarray:
    # Endpoints pinned to the sequence span so every render time is covered.
    if k == 2:
        return np.array([0.0, 1.0])
    for _ in range(1000):
        interior = np.sort(rng.uniform(0.0, 1.0, size=k - 2))
        times = np.concatenate([[0.0], interior, [1.0]])
        if np.min(np.diff(times)) >= 0.08:  # keep velocity extrapolation sane
            return times
    raise RuntimeError("failed to sample well-separated control times")


def _walk_additive(rng, times, start, params: MotionParams, draws) -> np.ndarray:
    k = times.size
    dim = start.size
    out = np.zeros((k, dim))
    out[0] = start
    if draws["frozen"]:
        out[:] = start
        return out
    share = draws["det_share"]
    for i in range(k - 1):
        if i == 0:
            det = out[0]
        else:
            det = constant_velocity_step(out[i - 1], out[i], times[i - 1], times[i], times[i + 1])
        stoch = out[i] + rng.uniform(-params.theta, params.theta, size=dim)
        out[i + 1] = share * det + (1.0 - share) * stoch
    return out


def _walk_scale(rng, times, params: MotionParams, draws) -> np.ndarray:
    k = times.size
    out = np.ones(k)
    if draws["frozen"]:
        return out
    share = draws["det_share"]
    for i in range(k - 1):
        if i == 0:
            det = out[0]
        else:
            det = constant_velocity_step(out[i - 1], out[i], times[i - 1], times[i], times[i + 1])
        delta0 = float(rng.uniform(0.0, params.theta))
        delta1 = int(rng.integers(0, 2))
        stoch = stochastic_scale_step(out[i], delta0, delta1)
        out[i + 1] = share * det + (1.0 - share) * stoch
    return out


# --------------------------------------------------------------------------
# Scene description and rendering


@dataclass(frozen=True)
class Sprite:
    """One foreground layer: RGB texture, alpha mask, canvas anchor, motion."""

    rgb: np.ndarray
    alpha: np.ndarray
    anchor: tuple[float, float]
    trajectory: SimilarityTrajectory
    name: str = "sprite"

    def __post_init__(self):
        rgb = np.asarray(self.rgb, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[-1] != 3:
            raise ValueError(f"sprite rgb must be (h, w, 3), got {rgb.shape}")
        if alpha.shape != rgb.shape[:2]:
            raise ValueError("sprite alpha must match the rgb raster")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "alpha", alpha)


@dataclass(frozen=True)
class SceneSpec:
    """Everything needed to render one sequence deterministically."""

    width: int
    height: int
    background: np.ndarray
    background_trajectory: SimilarityTrajectory
    sprites: tuple[Sprite, ...] = ()
    t_ref: float = 0.4
    t_end: float = 0.9
    duration: float = 1.0
    fps: int = 250
    background_name: str = "background"

    def __post_init__(self):
        bg = np.asarray(self.background, dtype=np.float64)
        if bg.shape != (self.height, self.width, 3):
            raise ValueError(
                f"background must be (height, width, 3) = "
                f"{(self.height, self.width, 3)}, got {bg.shape}"
            )
        if not 0.0 <= self.t_ref < self.t_end <= self.duration:
            raise ValueError("need 0 <= t_ref < t_end <= duration")
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "sprites", tuple(self.sprites))


def _affine_at(trajectory, t, center_local, anchor):
    tx, ty, rot_deg, scale = trajectory.transform_at(t)
    th = math.radians(rot_deg)
    a = scale * np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    b = np.asarray(anchor, dtype=np.float64) + np.array([tx, ty]) - a @ np.asarray(center_local)
    return a, b


def _invert_affine(a, b):
    inv = np.linalg.inv(a)
    return inv, -inv @ b


def _relative_affine(trajectory, t, t_ref, center_local, anchor):
    a_t, b_t = _affine_at(trajectory, t, center_local, anchor)
    a_r, b_r = _affine_at(trajectory, t_ref, center_local, anchor)
    a_r_inv, b_r_inv = _invert_affine(a_r, b_r)
    return a_t @ a_r_inv, a_t @ b_r_inv + b_t


def _center(shape_hw) -> np.ndarray:
    h, w = shape_hw
    return np.array([(w - 1) / 2.0, (h - 1) / 2.0])


def sample_bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray, mode: str = "clamp"):
    """Bilinear lookup at float coordinates; ``mode`` picks edge behavior."""
    if mode not in ("clamp", "zero"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    h, w = img.shape[:2]
    x0 = np.floor(xs)
    y0 = np.floor(ys)
    fx = xs - x0
    fy = ys - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    out = None
    for dy, dx, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy = y0 + dy
        xx = x0 + dx
        if mode == "zero":
            good = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            sample = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            weight = wgt * good
        else:
            sample = img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            weight = wgt
        if img.ndim == 3:
            weight = weight[..., None]
        out = weight * sample if out is None else out + weight * sample
    return out


def _canvas_grid(scene):
    ys, xs = np.mgrid[0 : scene.height, 0 : scene.width]
    return xs.astype(np.float64), ys.astype(np.float64)


def compose_frame(scene: SceneSpec, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Render the scene at time ``t``; returns (grayscale, rgb) in [0, 1].

    The background is inverse-warp sampled with clamped edges; sprites sample
    transparent outside their raster and are composited back to front in
    declaration order (later sprites on top).
    """
    xs, ys = _canvas_grid(scene)
    canvas_center = _center((scene.height, scene.width))

    a, b = _affine_at(scene.background_trajectory, t, _center(scene.background.shape[:2]), canvas_center)
    a_inv, b_inv = _invert_affine(a, b)
    ux = a_inv[0, 0] * xs + a_inv[0, 1] * ys + b_inv[0]
    uy = a_inv[1, 0] * xs + a_inv[1, 1] * ys + b_inv[1]
    rgb = sample_bilinear(scene.background, ux, uy, mode="clamp")

    for sprite in scene.sprites:
        a, b = _affine_at(sprite.trajectory, t, _center(sprite.alpha.shape), sprite.anchor)
        a_inv, b_inv = _invert_affine(a, b)
        ux = a_inv[0, 0] * xs + a_inv[0, 1] * ys + b_inv[0]
        uy = a_inv[1, 0] * xs + a_inv[1, 1] * ys + b_inv[1]
        alpha = sample_bilinear(sprite.alpha, ux, uy, mode="zero")
        color = sample_bilinear(sprite.rgb, ux, uy, mode="zero")
        rgb = color * alpha[..., None] + rgb * (1.0 - alpha[..., None])

    rgb = np.clip(rgb, 0.0, 1.0)
    gray = rgb @ _LUMA
    return gray, rgb


def ownership_map(scene: SceneSpec) -> np.ndarray:
    """Object id per pixel at the reference time: 0 background, 1..n sprites (topmost wins)."""
    xs, ys = _canvas_grid(scene)
    ids = np.zeros((scene.height, scene.width), dtype=np.int32)
    for k, sprite in enumerate(scene.sprites, start=1):
        a, b = _affine_at(sprite.trajectory, scene.t_ref, _center(sprite.alpha.shape), sprite.anchor)
        a_inv, b_inv = _invert_affine(a, b)
        ux = a_inv[0, 0] * xs + a_inv[0, 1] * ys + b_inv[0]
        uy = a_inv[1, 0] * xs + a_inv[1, 1] * ys + b_inv[1]
        alpha = sample_bilinear(sprite.alpha, ux, uy, mode="zero")
        ids[alpha > 0.5] = k
    return ids


def render_gt_trajectories(
    scene: SceneSpec, times: Sequence[float]
) -> tuple[list[FlowMap], np.ndarray, np.ndarray]:
    """Ground-truth displacements of reference-time pixels at later times.

    Every pixel follows the object that owns it at the reference time, even
    through occlusion or out-of-frame motion, so the flow at each requested
    time is the object's warp relative to the reference pose minus identity.
    Returns (flow maps tagged with normalized tau, object-id map, validity).
    """
    ids = ownership_map(scene)
    valid = np.ones_like(ids, dtype=bool)
    xs, ys = _canvas_grid(scene)
    span = scene.t_end - scene.t_ref

    layers = [
        (0, scene.background_trajectory, _center(scene.background.shape[:2]),
         _center((scene.height, scene.width))),
    ]
    for k, sprite in enumerate(scene.sprites, start=1):
        layers.append((k, sprite.trajectory, _center(sprite.alpha.shape), sprite.anchor))

    maps = []
    for t in times:
        tau = (float(t) - scene.t_ref) / span
        if not -1e-9 <= tau <= 1.0 + 1e-9:
            raise ValueError(f"ground-truth time {t} outside [t_ref, t_end]")
        values = np.zeros((scene.height, scene.width, 2))
        for obj_id, traj, center_local, anchor in layers:
            mask = ids == obj_id
            if not mask.any():
                continue
            a_rel, b_rel = _relative_affine(traj, float(t), scene.t_ref, center_local, anchor)
            nx = a_rel[0, 0] * xs + a_rel[0, 1] * ys + b_rel[0]
            ny = a_rel[1, 0] * xs + a_rel[1, 1] * ys + b_rel[1]
            values[mask, 0] = (nx - xs)[mask]
            values[mask, 1] = (ny - ys)[mask]
        maps.append(FlowMap(values, tau=min(max(tau, 0.0), 1.0), valid=valid.copy()))
    return maps, ids, valid


# --------------------------------------------------------------------------
# Event simulation


def simulate_events(
    frames: np.ndarray,
    timestamps_us: np.ndarray,
    threshold: float,
    rng: np.random.Generator | None = None,
    threshold_sigma: float = 0.0,
) -> EventStream:
    """Threshold-crossing events from a uniformly sampled intensity stack.

    Intensities are converted to log space, each pixel keeps a reference
    level initialized from the first frame, and every time the linearly
    interpolated log intensity moves a full threshold away from the
    reference an event is emitted at the interpolated crossing time and the
    reference advances by exactly one threshold. Noise-free by default; a
    positive ``threshold_sigma`` draws a static per-pixel threshold instead.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 3 or frames.shape[0] < 2:
        raise ValueError(f"need a (frames, H, W) stack with >= 2 frames, got {frames.shape}")
    if np.any(frames < 0.0):
        raise ValueError("intensities must be non-negative")
    timestamps_us = np.asarray(timestamps_us, dtype=np.int64)
    if timestamps_us.shape != (frames.shape[0],):
        raise ValueError("need one timestamp per frame")
    gaps = np.diff(timestamps_us)
    if gaps.size == 0 or np.any(gaps <= 0) or np.unique(gaps).size != 1:
        raise ValueError("frame timestamps must be strictly increasing and uniform")
    if threshold <= 0.0:
        raise ValueError(f"threshold must be positive, got {threshold}")

    n_frames, h, w = frames.shape
    n_pix = h * w
    log_frames = np.log(frames + _LOG_EPS).reshape(n_frames, n_pix)

    if threshold_sigma > 0.0:
        if rng is None:
            raise ValueError("threshold noise requires an rng")
        thresh = np.clip(
            threshold + threshold_sigma * rng.standard_normal(n_pix), 0.01, None
        )
    else:
        thresh = np.full(n_pix, float(threshold))

    xs_flat = np.tile(np.arange(w, dtype=np.int64), h)
    ys_flat = np.repeat(np.arange(h, dtype=np.int64), w)

    ref = log_frames[0].copy()
    out_x, out_y, out_t, out_p = [], [], [], []
    for f in range(n_frames - 1):
        a = log_frames[f]
        b = log_frames[f + 1]
        t_a = float(timestamps_us[f])
        dt = float(gaps[f])
        for sign in (1.0, -1.0):
            d = sign * (b - ref)
            counts = np.floor((d + THRESHOLD_SLACK) / thresh).astype(np.int64)
            np.clip(counts, 0, None, out=counts)
            idx = np.nonzero(counts)[0]
            if idx.size == 0:
                continue
            c = counts[idx]
            pix = np.repeat(idx, c)
            step = np.arange(c.sum()) - np.repeat(np.cumsum(c) - c, c) + 1
            levels = ref[pix] + sign * step * thresh[pix]
            frac = np.clip((levels - a[pix]) / (b[pix] - a[pix]), 0.0, 1.0)
            out_x.append(xs_flat[pix])
            out_y.append(ys_flat[pix])
            out_t.append(t_a + frac * dt)
            out_p.append(np.full(pix.size, int(sign), dtype=np.int64))
            ref[idx] += sign * c * thresh[idx]

    if not out_x:
        return EventStream.empty(w, h)
    x = np.concatenate(out_x)
    y = np.concatenate(out_y)
    t = np.round(np.concatenate(out_t)).astype(np.int64)
    p = np.concatenate(out_p)
    order = np.lexsort((p, x, y, t))
    return EventStream(x[order], y[order], t[order], p[order], w, h)


# --------------------------------------------------------------------------
# Analytic camera-approach trajectories


@dataclass(frozen=True)
class PinholeParams:
    """A 3-D point observed by a pinhole camera approaching at constant speed."""

    focal: float
    x0: float
    y0: float
    point_x: float
    point_y: float
    depth: float
    speed: float


def pinhole_trajectory(t, params: PinholeParams) -> np.ndarray:
    """Projected pixel position of the point at time(s) ``t``.

    The camera closes the depth gap linearly, so the projection is
    ``focal * X / (depth - speed * t) + x0`` per axis; the remaining depth
    must stay positive for every requested time.
    """
    t = np.asarray(t, dtype=np.float64)
    z = params.depth - params.speed * t
    if np.any(z <= 0.0):
        raise ValueError("point depth reaches zero inside the requested time range")
    x = params.focal * params.point_x / z + params.x0
    y = params.focal * params.point_y / z + params.y0
    return np.stack(np.broadcast_arrays(x, y), axis=-1)


# --------------------------------------------------------------------------
# Sequence generation


@dataclass
class GeneratorConfig:
    """Knobs for random sequence generation; defaults are desk scale."""

    canvas_width: int = 128
    canvas_height: int = 128
    fps: int = 250
    duration_s: float = 1.0
    t_ref_s: float = 0.4
    t_end_s: float = 0.9
    gt_step_ms: int = 10
    contrast_threshold: float = 0.2
    threshold_sigma: float = 0.0
    sprites_min: int = 1
    sprites_max: int = 3
    sprite_px: int = 0  # 0 keeps the asset raster; else max side in pixels
    save_all_frames: bool = False
    background_dir: str = ""
    sprite_dir: str = ""
    bg_alpha: float = 0.1
    bg_translation_beta: float = 0.0
    bg_translation_gamma: float = 0.8
    bg_translation_theta: float = 30.0
    bg_rotation_beta: float = 0.7
    bg_rotation_gamma: float = 0.6
    bg_rotation_theta: float = 10.0
    bg_scale_beta: float = 0.4
    bg_scale_gamma: float = 0.3
    bg_scale_theta: float = 0.15
    fg_alpha: float = 0.0
    fg_translation_beta: float = 0.0
    fg_translation_gamma: float = 0.9
    fg_translation_theta: float = 120.0
    fg_rotation_beta: float = 0.3
    fg_rotation_gamma: float = 0.6
    fg_rotation_theta: float = 30.0
    fg_scale_beta: float = 0.3
    fg_scale_gamma: float = 0.3
    fg_scale_theta: float = 0.30

    def validate(self) -> None:
        if self.canvas_width < 8 or self.canvas_height < 8:
            raise ValueError("canvas must be at least 8x8")
        if self.fps < 2 or 1_000_000 % self.fps != 0:
            raise ValueError("fps must divide 1e6 microseconds evenly")
        if not 0.0 <= self.t_ref_s < self.t_end_s <= self.duration_s:
            raise ValueError("need 0 <= t_ref < t_end <= duration")
        for name in ("t_ref_s", "t_end_s", "duration_s"):
            v = getattr(self, name) * self.fps
            if abs(v - round(v)) > 1e-6:
                raise ValueError(f"{name} must land on the frame grid at {self.fps} fps")
        if self.gt_step_ms < 1:
            raise ValueError("gt_step_ms must be >= 1")
        if not 0 <= self.sprites_min <= self.sprites_max:
            raise ValueError("need 0 <= sprites_min <= sprites_max")
        if self.contrast_threshold <= 0:
            raise ValueError("contrast threshold must be positive")

    def motion_params(self, layer: str) -> dict[str, MotionParams]:
        if layer not in ("bg", "fg"):
            raise ValueError(f"layer must be 'bg' or 'fg', got {layer!r}")
        alpha = self.bg_alpha if layer == "bg" else self.fg_alpha
        out = {}
        for comp in COMPONENTS:
            out[comp] = MotionParams(
                alpha=alpha,
                beta=getattr(self, f"{layer}_{comp}_beta"),
                gamma=getattr(self, f"{layer}_{comp}_gamma"),
                theta=getattr(self, f"{layer}_{comp}_theta"),
            )
        return out

    @classmethod
    def paper_scale(cls, **overrides) -> "GeneratorConfig":
        """Higher-rate preset: 1000 fps rendering, otherwise the same process."""
        return replace(cls(fps=1000), **overrides)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _list_assets(directory: str | Path) -> list[Path]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"asset directory not found: {root}")
    found = sorted(
        p for p in root.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp")
    )
    if not found:
        raise FileNotFoundError(f"no image assets in {root}")
    return found


def _load_rgba(path: Path) -> tuple[np.ndarray, np.ndarray]:
    from PIL import Image

    with Image.open(path) as img:
        img = img.convert("RGBA")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr[..., :3], arr[..., 3]


def _resize_rgba(rgb, alpha, size_wh) -> tuple[np.ndarray, np.ndarray]:
    from PIL import Image

    stack = np.concatenate([rgb, alpha[..., None]], axis=-1)
    img = Image.fromarray(np.round(stack * 255.0).astype(np.uint8), mode="RGBA")
    img = img.resize(size_wh, Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    return arr[..., :3], arr[..., 3]


def sample_scene(
    config: GeneratorConfig,
    rng: np.random.Generator,
    backgrounds: Sequence[Path],
    sprite_assets: Sequence[Path],
) -> SceneSpec:
    """Draw a random scene: asset picks, anchors, and motion trajectories."""
    config.validate()
    bg_path = backgrounds[int(rng.integers(len(backgrounds)))]
    bg_rgb, _ = _load_rgba(bg_path)
    bg_rgb, _ = _resize_rgba(
        bg_rgb, np.ones(bg_rgb.shape[:2]), (config.canvas_width, config.canvas_height)
    )
    bg_traj = sample_control_points(rng, config.motion_params("bg"))

    sprites = []
    n_sprites = int(rng.integers(config.sprites_min, config.sprites_max + 1))
    for _ in range(n_sprites):
        path = sprite_assets[int(rng.integers(len(sprite_assets)))]
        rgb, alpha = _load_rgba(path)
        if config.sprite_px > 0:
            h, w = alpha.shape
            scale = config.sprite_px / max(h, w)
            size = (max(int(round(w * scale)), 2), max(int(round(h * scale)), 2))
            rgb, alpha = _resize_rgba(rgb, alpha, size)
        anchor = (
            float(rng.uniform(0.2, 0.8) * config.canvas_width),
            float(rng.uniform(0.2, 0.8) * config.canvas_height),
        )
        traj = sample_control_points(rng, config.motion_params("fg"))
        sprites.append(
            Sprite(rgb=rgb, alpha=alpha, anchor=anchor, trajectory=traj, name=path.name)
        )

    return SceneSpec(
        width=config.canvas_width,
        height=config.canvas_height,
        background=bg_rgb,
        background_trajectory=bg_traj,
        sprites=tuple(sprites),
        t_ref=config.t_ref_s,
        t_end=config.t_end_s,
        duration=config.duration_s,
        fps=config.fps,
        background_name=bg_path.name,
    )


def frame_times_us(config_or_scene) -> np.ndarray:
    fps = config_or_scene.fps
    duration = getattr(config_or_scene, "duration_s", None)
    if duration is None:
        duration = config_or_scene.duration
    step = 1_000_000 // fps
    count = int(round(duration * fps))
    return np.arange(count + 1, dtype=np.int64) * step


def gt_times_s(config_or_scene) -> np.ndarray:
    t_ref = getattr(config_or_scene, "t_ref_s", None)
    t_end = getattr(config_or_scene, "t_end_s", None)
    if t_ref is None:
        t_ref, t_end = config_or_scene.t_ref, config_or_scene.t_end
    step = getattr(config_or_scene, "gt_step_ms", 10) / 1000.0
    n = int(math.floor((t_end - t_ref) / step + 1e-9))
    return t_ref + step * np.arange(n + 1)


def generate_sequence(
    config: GeneratorConfig, seed: int, out_root: str | Path
) -> tuple[Path, dict]:
    """Render one full sequence to ``out_root/seq_<seed>`` and return its manifest.

    Layout: ``frames/frame_<ms>.png`` (reference and final ground-truth times,
    or every frame with ``save_all_frames``), ``events.evf``,
    ``gt/flow_<offset_ms>.flo32`` with text sidecars, ``gt/object_ids.png``,
    and ``manifest.json``. Identical config and seed reproduce every byte.
    """
    from . import fileio

    config.validate()
    rng = np.random.default_rng(seed)
    backgrounds = _list_assets(config.background_dir)
    sprite_assets = _list_assets(config.sprite_dir)
    scene = sample_scene(config, rng, backgrounds, sprite_assets)

    seq_dir = Path(out_root) / f"seq_{seed}"
    (seq_dir / "frames").mkdir(parents=True, exist_ok=True)
    (seq_dir / "gt").mkdir(parents=True, exist_ok=True)

    times_us = frame_times_us(config)
    times_s = times_us / 1e6
    save_ms = {int(round(config.t_ref_s * 1000)), int(round(config.t_end_s * 1000))}

    gray_stack = np.empty((times_s.size, scene.height, scene.width))
    frame_files = []
    for i, t in enumerate(times_s):
        gray, rgb = compose_frame(scene, float(t))
        gray_stack[i] = gray
        ms = int(round(t * 1000))
        if config.save_all_frames or ms in save_ms:
            name = f"frames/frame_{ms:04d}.png"
            fileio.save_image(seq_dir / name, rgb)
            frame_files.append(name)

    stream = simulate_events(
        gray_stack,
        times_us,
        config.contrast_threshold,
        rng=rng,
        threshold_sigma=config.threshold_sigma,
    )
    fileio.write_events(seq_dir / "events.evf", stream)

    gt_grid = gt_times_s(config)
    flows, ids, _ = render_gt_trajectories(scene, gt_grid)
    gt_files = []
    for t, flow in zip(gt_grid, flows):
        offset_ms = int(round((t - config.t_ref_s) * 1000))
        name = f"gt/flow_{offset_ms:04d}.flo32"
        fileio.write_flow(seq_dir / name, flow)
        gt_files.append(name)
    fileio.save_image(seq_dir / "gt" / "object_ids.png", ids.astype(np.uint8))

    manifest = {
        "format": "evtraj-sequence/1",
        "seed": int(seed),
        "canvas": [config.canvas_width, config.canvas_height],
        "fps": config.fps,
        "duration_s": config.duration_s,
        "t_ref_s": config.t_ref_s,
        "t_end_s": config.t_end_s,
        "gt_step_ms": config.gt_step_ms,
        "contrast_threshold": config.contrast_threshold,
        "threshold_sigma": config.threshold_sigma,
        "event_count": len(stream),
        "background": {
            "asset": scene.background_name,
            "control": scene.background_trajectory.control_dict(),
        },
        "sprites": [
            {
                "asset": s.name,
                "anchor": [s.anchor[0], s.anchor[1]],
                "raster": [int(s.alpha.shape[1]), int(s.alpha.shape[0])],
                "control": s.trajectory.control_dict(),
            }
            for s in scene.sprites
        ],
        "frames": frame_files,
        "gt": gt_files,
    }
    payload = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    fileio.atomic_write_bytes(seq_dir / "manifest.json", payload.encode())
    return seq_dir, manifest
