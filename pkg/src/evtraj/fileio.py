"""On-disk formats: event files, flow tensors, voxel grids, images.

Binary payloads are raw little-endian arrays; everything a human might need
to know about them (dims, timestamps, dtype) lives in a text sidecar next to
the payload, one ``key: value`` per line. All writes go through a
temp-file-and-rename so readers never observe half-written files.

Event files ("EVF1"): 16-byte header (magic, u16 width, u16 height, u64
count), then packed 13-byte records of (x: u16, y: u16, t: i64 microseconds,
p: i8), little-endian throughout.

Flow files (".flo32"): raw float32, u plane then v plane, C order, H*W each.
The sidecar records width/height/tau and, when any pixel is invalid, the
name of a 0/1 byte mask file. Values are never NaN; validity travels in the
mask.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .bezier import BezierField, FlowMap
from .events import EventStream, VoxelGrid

_EVF_MAGIC = b"EVF1"
_EVF_HEADER = struct.Struct("<4sHHQ")
_EVF_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "<i1")])


class EvfFormatError(ValueError):
    """Base class for event-file format problems."""


class EvfMagicError(EvfFormatError):
    """File does not start with the EVF1 magic."""


class EvfTruncatedError(EvfFormatError):
    """Payload size disagrees with the header record count."""


class EvfOrderError(EvfFormatError):
    """Timestamps are not non-decreasing."""


class EvfBoundsError(EvfFormatError):
    """Coordinates or polarities fall outside the declared sensor."""


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` via a same-directory temp file + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def format_kv(pairs: dict[str, str]) -> str:
    return "".join(f"{k}: {v}\n" for k, v in pairs.items())


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ValueError(f"malformed sidecar line: {line!r}")
        key, value = line.split(":", 1)
        out[key.strip()] = value.strip()
    return out


# --------------------------------------------------------------------------
# Event streams


def write_events(path: str | Path, stream: EventStream) -> None:
    records = np.empty(len(stream), dtype=_EVF_RECORD)
    records["x"] = stream.x
    records["y"] = stream.y
    records["t"] = stream.t
    records["p"] = stream.p
    header = _EVF_HEADER.pack(_EVF_MAGIC, stream.width, stream.height, len(stream))
    atomic_write_bytes(path, header + records.tobytes())


def read_events(path: str | Path) -> EventStream:
    """Read an EVF1 file, validating magic, size, bounds, and sort order."""
    raw = Path(path).read_bytes()
    if len(raw) < _EVF_HEADER.size:
        raise EvfTruncatedError(f"{path}: shorter than the 16-byte header")
    magic, width, height, count = _EVF_HEADER.unpack_from(raw)
    if magic != _EVF_MAGIC:
        raise EvfMagicError(f"{path}: bad magic {magic!r}, expected {_EVF_MAGIC!r}")
    payload = raw[_EVF_HEADER.size :]
    expected = count * _EVF_RECORD.itemsize
    if len(payload) != expected:
        raise EvfTruncatedError(
            f"{path}: header promises {count} records ({expected} bytes), "
            f"payload has {len(payload)} bytes"
        )
    records = np.frombuffer(payload, dtype=_EVF_RECORD)
    x = records["x"].astype(np.int64)
    y = records["y"].astype(np.int64)
    t = records["t"].astype(np.int64)
    p = records["p"].astype(np.int64)
    if count:
        if np.any(np.diff(t) < 0):
            raise EvfOrderError(f"{path}: timestamps decrease")
        if np.any((x >= width) | (y >= height)):
            raise EvfBoundsError(f"{path}: coordinates outside {width}x{height}")
        if np.any(np.abs(p) != 1):
            raise EvfBoundsError(f"{path}: polarities must be +-1")
    return EventStream(x, y, t, p, int(width), int(height))


# --------------------------------------------------------------------------
# Flow maps


def write_flow(path: str | Path, flow: FlowMap) -> None:
    """Raw f32 planes plus a text sidecar; validity goes to a 0/1 mask file."""
    path = Path(path)
    values = flow.values
    if not np.isfinite(values).all():
        raise ValueError("flow values must be finite; carry invalid pixels in the mask")
    planes = np.ascontiguousarray(
        np.stack([values[..., 0], values[..., 1]]), dtype="<f4"
    )
    meta = {
        "format": "flow-f32/1",
        "width": str(flow.values.shape[1]),
        "height": str(flow.values.shape[0]),
        "tau": repr(float(flow.tau)),
    }
    if flow.valid is not None and not flow.valid.all():
        mask_name = path.name + ".mask"
        atomic_write_bytes(path.parent / mask_name, flow.valid.astype(np.uint8).tobytes())
        meta["mask"] = mask_name
    atomic_write_bytes(path, planes.tobytes())
    atomic_write_bytes(str(path) + ".txt", format_kv(meta).encode())


def read_flow(path: str | Path) -> FlowMap:
    path = Path(path)
    sidecar = Path(str(path) + ".txt")
    if not sidecar.is_file():
        raise FileNotFoundError(f"missing flow sidecar {sidecar}")
    meta = parse_kv(sidecar.read_text())
    width = int(meta["width"])
    height = int(meta["height"])
    tau = float(meta["tau"])
    raw = path.read_bytes()
    if len(raw) != 2 * height * width * 4:
        raise ValueError(
            f"{path}: payload is {len(raw)} bytes, sidecar says "
            f"{height}x{width} (expected {2 * height * width * 4})"
        )
    planes = np.frombuffer(raw, dtype="<f4").reshape(2, height, width)
    values = np.stack([planes[0], planes[1]], axis=-1).astype(np.float64)
    valid = np.ones((height, width), dtype=bool)
    if "mask" in meta:
        mask_raw = (path.parent / meta["mask"]).read_bytes()
        if len(mask_raw) != height * width:
            raise ValueError(f"{path}: mask size does not match the flow dims")
        mask = np.frombuffer(mask_raw, dtype=np.uint8)
        if np.any(mask > 1):
            raise ValueError(f"{path}: mask bytes must be 0 or 1")
        valid = mask.reshape(height, width).astype(bool)
    return FlowMap(values, tau=tau, valid=valid)


# --------------------------------------------------------------------------
# Bezier fields and voxel grids


def write_bezier(path: str | Path, field: BezierField) -> None:
    payload = np.ascontiguousarray(field.control_points, dtype="<f8").tobytes()
    meta = {
        "format": "bezier-f64/1",
        "degree": str(field.degree),
        "height": str(field.height),
        "width": str(field.width),
    }
    atomic_write_bytes(path, payload)
    atomic_write_bytes(str(path) + ".txt", format_kv(meta).encode())


def read_bezier(path: str | Path) -> BezierField:
    path = Path(path)
    meta = parse_kv(Path(str(path) + ".txt").read_text())
    degree = int(meta["degree"])
    height = int(meta["height"])
    width = int(meta["width"])
    raw = path.read_bytes()
    expected = degree * height * width * 2 * 8
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f8").reshape(degree, height, width, 2)
    return BezierField(values.copy())


def write_voxels(path: str | Path, grid: VoxelGrid) -> None:
    """Raw f32 tensor (lossy from the f64 accumulator) plus dims/timestamps."""
    payload = np.ascontiguousarray(grid.values, dtype="<f4").tobytes()
    meta = {
        "format": "voxel-f32/1",
        "bins": str(grid.bins),
        "height": str(grid.height),
        "width": str(grid.width),
        "t_start": repr(float(grid.t_start)),
        "t_end": repr(float(grid.t_end)),
        "bin_timestamps": " ".join(repr(float(t)) for t in grid.bin_timestamps),
    }
    atomic_write_bytes(path, payload)
    atomic_write_bytes(str(path) + ".txt", format_kv(meta).encode())


def read_voxels(path: str | Path) -> VoxelGrid:
    path = Path(path)
    meta = parse_kv(Path(str(path) + ".txt").read_text())
    bins = int(meta["bins"])
    height = int(meta["height"])
    width = int(meta["width"])
    raw = path.read_bytes()
    expected = bins * height * width * 4
    if len(raw) != expected:
        raise ValueError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    values = np.frombuffer(raw, dtype="<f4").reshape(bins, height, width)
    stamps = np.array([float(v) for v in meta["bin_timestamps"].split()])
    return VoxelGrid(
        values=values.astype(np.float64),
        t_start=float(meta["t_start"]),
        t_end=float(meta["t_end"]),
        bin_timestamps=stamps,
    )


# --------------------------------------------------------------------------
# Images


def _to_uint8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    if np.issubdtype(image.dtype, np.floating):
        return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    if np.issubdtype(image.dtype, np.integer):
        return np.clip(image, 0, 255).astype(np.uint8)
    raise TypeError(f"cannot convert dtype {image.dtype} to an 8-bit image")


def _pnm_bytes(image: np.ndarray) -> bytes:
    if image.ndim == 2:
        header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n"
    else:
        header = f"P6\n{image.shape[1]} {image.shape[0]}\n255\n"
    return header.encode() + image.tobytes()


def save_image(path: str | Path, image: np.ndarray) -> None:
    """Save gray (H, W) or RGB (H, W, 3) data as 8-bit PNG.

    Floats are taken in [0, 1]. ``.pgm``/``.ppm`` paths, or a missing PIL,
    fall back to the matching binary PNM payload.
    """
    path = Path(path)
    image = _to_uint8(image)
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[-1] != 3):
        raise ValueError(f"expected (H, W) or (H, W, 3), got {image.shape}")
    if path.suffix.lower() in (".pgm", ".ppm"):
        atomic_write_bytes(path, _pnm_bytes(image))
        return
    try:
        from PIL import Image
    except ImportError:
        atomic_write_bytes(path, _pnm_bytes(image))
        return
    import io

    buf = io.BytesIO()
    Image.fromarray(image).save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def _load_pnm(raw: bytes) -> np.ndarray:
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    magic, width, height = fields[0], int(fields[1]), int(fields[2])
    if int(fields[3]) != 255:
        raise ValueError("only 8-bit PNM images are supported")
    data = np.frombuffer(raw, dtype=np.uint8, offset=pos)
    if magic == b"P5":
        return data[: height * width].reshape(height, width).copy()
    if magic == b"P6":
        return data[: height * width * 3].reshape(height, width, 3).copy()
    raise ValueError(f"unsupported PNM magic {magic!r}")


def load_image(path: str | Path) -> np.ndarray:
    """Load an image as uint8, (H, W) for grayscale or (H, W, 3) otherwise."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] in (b"P5", b"P6"):
        return _load_pnm(raw)
    from PIL import Image

    with Image.open(path) as img:
        if img.mode in ("L", "I;16", "I"):
            return np.asarray(img.convert("L"), dtype=np.uint8)
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """uint8 or float image to float64 gray in [0, 1]."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        image = image.astype(np.float64) / 255.0
    if image.ndim == 3:
        image = image @ np.array([0.299, 0.587, 0.114])
    return image


# --------------------------------------------------------------------------
# Flow visualization


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - f * s)
    t = v * (1.0 - (1.0 - f) * s)
    rgb = np.zeros(h.shape + (3,))
    for idx, channels in enumerate(
        ((v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q))
    ):
        sel = i == idx
        for c in range(3):
            rgb[..., c] = np.where(sel, channels[c], rgb[..., c])
    return rgb


def colorize_flow(flow: FlowMap, max_magnitude: float | None = None) -> np.ndarray:
    """Direction-as-hue flow rendering: zero flow is white, invalid gray."""
    u = flow.values[..., 0]
    v = flow.values[..., 1]
    magnitude = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(magnitude.max())
    if max_magnitude <= 0.0:
        max_magnitude = 1.0
    hue = (np.arctan2(v, u) / (2.0 * np.pi)) % 1.0
    sat = np.clip(magnitude / max_magnitude, 0.0, 1.0)
    rgb = _hsv_to_rgb(hue, sat, np.ones_like(sat))
    if flow.valid is not None:
        rgb = np.where(flow.valid[..., None], rgb, 0.5)
    return np.round(rgb * 255.0).astype(np.uint8)
