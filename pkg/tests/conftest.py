"""Shared scene builders for the test suite.

Two families of synthetic input are used throughout: a translating textured
sprite (uniform velocity, the easy case) and a camera-approach zoom where the
depth gap closes linearly so image motion accelerates hyperbolically. Both
come with closed-form ground truth.
"""

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from evtraj.multiflow import simulate_events


# --------------------------------------------------------------------------
# textures


def blob_fine_texture(rng, size, blob_sigma=6.0, fine_amp=0.15, base=0.3, span=0.45):
    """Smooth blobs plus per-2px-cell noise; matches well under translation."""
    field = gaussian_filter(rng.standard_normal((size, size)), blob_sigma)
    field *= span / (np.abs(field).max() + 1e-12)
    n = (size + 1) // 2
    cells = fine_amp * (2.0 * rng.random((n, n)) - 1.0)
    fine = np.repeat(np.repeat(cells, 2, axis=0), 2, axis=1)[:size, :size]
    return np.clip(base + field + fine, 0.05, 1.0)


def blob_annulus_texture(rng, size, sigma=3.5, span=0.6, r_in=30, r_out=62):
    """Mid-gray canvas with a smooth-blob annulus around the center."""
    field = gaussian_filter(rng.standard_normal((size, size)), sigma)
    field *= span / (np.abs(field).max() + 1e-12)
    tex = np.clip(0.5 + field, 0.05, 1.0)
    c = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    rho = np.hypot(xs - c, ys - c)
    return np.where((rho >= r_in) & (rho <= r_out), tex, 0.5)


# --------------------------------------------------------------------------
# translating sprite


def translation_scene(
    seed,
    disp=(8.0, -6.0),
    canvas=128,
    sprite_size=56,
    threshold=0.02,
    t_ref=0.5,
    fps=250,
):
    """Textured square sprite moving at constant velocity over a gray canvas.

    The sprite covers ``disp`` pixels between ``t_ref`` and the end of the
    one-second recording. Returns the event stream and a dict with the exact
    displacement field parameters.
    """
    rng = np.random.default_rng(seed)
    tex = blob_fine_texture(rng, sprite_size)
    anchor = np.array(
        [
            (canvas - sprite_size) / 2.0 - disp[0] * t_ref,
            (canvas - sprite_size) / 2.0 - disp[1] * t_ref,
        ]
    )
    # velocity in px/s such that the [t_ref, 1.0] window accumulates disp
    vel = np.asarray(disp, dtype=np.float64) / (1.0 - t_ref)

    n_frames = fps + 1
    t_grid = np.arange(n_frames) / fps
    ys, xs = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    frames = np.empty((n_frames, canvas, canvas))
    for i, t in enumerate(t_grid):
        ox, oy = anchor + vel * t
        sx = xs - ox
        sy = ys - oy
        inside = (sx >= 0) & (sx <= sprite_size - 1) & (sy >= 0) & (sy <= sprite_size - 1)
        x0 = np.clip(np.floor(sx).astype(int), 0, sprite_size - 2)
        y0 = np.clip(np.floor(sy).astype(int), 0, sprite_size - 2)
        fx = np.clip(sx - x0, 0.0, 1.0)
        fy = np.clip(sy - y0, 0.0, 1.0)
        val = (
            (1 - fy) * (1 - fx) * tex[y0, x0]
            + (1 - fy) * fx * tex[y0, x0 + 1]
            + fy * (1 - fx) * tex[y0 + 1, x0]
            + fy * fx * tex[y0 + 1, x0 + 1]
        )
        frames[i] = np.where(inside, val, 0.5)

    stamps = np.round(t_grid * 1e6).astype(np.int64)
    stream = simulate_events(frames, stamps, threshold)
    params = {
        "disp": np.asarray(disp, dtype=np.float64),
        "canvas": canvas,
        "sprite_size": sprite_size,
        "anchor": anchor,
        "vel": vel,
        "t_ref": t_ref,
    }
    return stream, params


def translation_mask(params, erode=3):
    """Pixels covered by the sprite at the reference time, shrunk by erode px."""
    canvas = params["canvas"]
    ox, oy = params["anchor"] + params["vel"] * params["t_ref"]
    ys, xs = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    side = params["sprite_size"] - 1
    return (
        (xs >= ox + erode)
        & (xs <= ox + side - erode)
        & (ys >= oy + erode)
        & (ys <= oy + side - erode)
    )


# --------------------------------------------------------------------------
# camera-approach zoom

# Depth shrinks linearly, so the scale factor relative to the reference frame
# is k(t) = (depth - t_ref) / (depth - t) and every pixel moves radially away
# from the canvas center by (k - 1) * (p - c). Depth is chosen so the scale
# reaches k_end exactly at the end of the recording.


def zoom_scale(t, depth, t_ref):
    return (depth - t_ref) / (depth - t)


def zoom_scene(seed, k_end=1.15, canvas=128, threshold=0.012, t_ref=0.5, fps=250):
    depth = (k_end - 0.5) / (k_end - 1.0)
    rng = np.random.default_rng(seed)
    tex = blob_annulus_texture(rng, canvas)
    c = (canvas - 1) / 2.0
    n_frames = fps + 1
    t_grid = np.arange(n_frames) / fps
    ys, xs = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    frames = np.empty((n_frames, canvas, canvas))
    for i, t in enumerate(t_grid):
        k = zoom_scale(t, depth, t_ref)
        sx = (xs - c) / k + c
        sy = (ys - c) / k + c
        x0 = np.clip(np.floor(sx).astype(int), 0, canvas - 2)
        y0 = np.clip(np.floor(sy).astype(int), 0, canvas - 2)
        fx = np.clip(sx - x0, 0.0, 1.0)
        fy = np.clip(sy - y0, 0.0, 1.0)
        frames[i] = (
            (1 - fy) * (1 - fx) * tex[y0, x0]
            + (1 - fy) * fx * tex[y0, x0 + 1]
            + fy * (1 - fx) * tex[y0 + 1, x0]
            + fy * fx * tex[y0 + 1, x0 + 1]
        )
    stamps = np.round(t_grid * 1e6).astype(np.int64)
    stream = simulate_events(frames, stamps, threshold)
    params = {"depth": depth, "k_end": k_end, "canvas": canvas, "t_ref": t_ref}
    return stream, params


def zoom_gt(params, tau):
    """Exact displacement field at curve time tau in [0, 1]."""
    canvas = params["canvas"]
    c = (canvas - 1) / 2.0
    t = params["t_ref"] + tau * (1.0 - params["t_ref"])
    k = zoom_scale(t, params["depth"], params["t_ref"])
    ys, xs = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    return (k - 1.0) * (xs - c), (k - 1.0) * (ys - c)


def zoom_mask(params, r_lo=42.0, r_hi=56.0):
    canvas = params["canvas"]
    c = (canvas - 1) / 2.0
    ys, xs = np.mgrid[0:canvas, 0:canvas].astype(np.float64)
    rho = np.hypot(xs - c, ys - c)
    return (rho >= r_lo) & (rho <= r_hi)


def zoom_tepe(field, params, mask, taus=(0.25, 0.5, 0.75, 1.0)):
    errs = []
    for tau in taus:
        gx, gy = zoom_gt(params, tau)
        fm = field.evaluate(tau)
        err = np.hypot(fm.values[..., 0] - gx, fm.values[..., 1] - gy)
        errs.append(float(err[mask].mean()))
    return float(np.mean(errs)), errs


# --------------------------------------------------------------------------
# generator assets


def make_asset_dirs(root: Path, seed=0):
    """Write one textured background and one textured round sprite as PNGs."""
    from PIL import Image

    rng = np.random.default_rng(seed)
    bg_dir = root / "backgrounds"
    fg_dir = root / "sprites"
    bg_dir.mkdir(parents=True, exist_ok=True)
    fg_dir.mkdir(parents=True, exist_ok=True)

    bg = (255 * blob_fine_texture(rng, 160)).astype(np.uint8)
    Image.fromarray(np.stack([bg] * 3, axis=-1)).save(bg_dir / "bg.png")

    size = 48
    tex = (255 * blob_fine_texture(rng, size, blob_sigma=3.0)).astype(np.uint8)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    c = (size - 1) / 2.0
    alpha = (np.hypot(xs - c, ys - c) <= c).astype(np.uint8) * 255
    rgba = np.stack([tex, tex, tex, alpha], axis=-1)
    Image.fromarray(rgba, mode="RGBA").save(fg_dir / "disc.png")
    return str(bg_dir), str(fg_dir)
