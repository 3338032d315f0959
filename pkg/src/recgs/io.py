"""On-disk formats.

Float images: 16-byte little-endian header (magic, width, height, channels
as uint32) followed by float32 samples in row-major (H, W, C) order.
Pose file: a header line ``fx fy cx cy width height`` and then one line per
frame ``frame_id qw qx qy qz tx ty tz`` (world to camera).
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import Camera, GaussianCloud

MAGIC = 0x46474352  # "RCGF" little-endian
HEADER = np.dtype([("magic", "<u4"), ("width", "<u4"), ("height", "<u4"), ("channels", "<u4")])


class FormatError(ValueError):
    """Malformed file contents."""


def write_float_image(path, img):
    img = np.asarray(img)
    if img.ndim != 3:
        raise ValueError(f"expected (H, W, C) image, got shape {img.shape}")
    h, w, c = img.shape
    header = np.array([(MAGIC, w, h, c)], dtype=HEADER)
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(np.ascontiguousarray(img, dtype="<f4").tobytes())


def read_float_image(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.itemsize:
        raise FormatError(f"{path}: truncated header")
    hdr = np.frombuffer(raw[:HEADER.itemsize], dtype=HEADER)[0]
    if hdr["magic"] != MAGIC:
        raise FormatError(f"{path}: bad magic {int(hdr['magic']):#x}")
    w, h, c = int(hdr["width"]), int(hdr["height"]), int(hdr["channels"])
    body = raw[HEADER.itemsize:]
    if len(body) != 4 * w * h * c:
        raise FormatError(f"{path}: expected {4 * w * h * c} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(np.float64)


def write_png(path, img):
    """8-bit preview, clamped to [0, 1]."""
    q = np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(q).save(path, format="PNG")


def _fmt(x: float) -> str:
    return repr(float(x))  # shortest round-tripping form, up to 17 significant digits


def write_poses(path, cameras):
    cameras = list(cameras)
    if not cameras:
        raise ValueError("no cameras to write")
    c0 = cameras[0]
    for cam in cameras:
        if (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height) != (
                c0.fx, c0.fy, c0.cx, c0.cy, c0.width, c0.height):
            raise ValueError("pose file requires shared intrinsics")
    lines = [" ".join([_fmt(c0.fx), _fmt(c0.fy), _fmt(c0.cx), _fmt(c0.cy), str(c0.width), str(c0.height)])]
    for cam in cameras:
        vals = [*cam.rotation, *cam.translation]
        lines.append(" ".join([str(cam.frame_id)] + [_fmt(v) for v in vals]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path) -> list[Camera]:
    lines = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 6:
        raise FormatError(f"{path}: header must be 'fx fy cx cy width height'")
    try:
        fx, fy, cx, cy = map(float, lines[0][:4])
        width, height = int(lines[0][4]), int(lines[0][5])
        cams = []
        for row in lines[1:]:
            if len(row) != 8:
                raise FormatError(f"{path}: pose line needs 8 fields, got {len(row)}")
            vals = list(map(float, row[1:]))
            cams.append(Camera(int(row[0]), fx, fy, cx, cy, tuple(vals[:4]), tuple(vals[4:]),
                               width, height))
    except ValueError as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from exc
    return cams


def save_cloud(path, cloud: GaussianCloud):
    np.savez(path, **cloud.arrays())


def load_cloud(path) -> GaussianCloud:
    with np.load(path) as z:
        return GaussianCloud(**{k: z[k] for k in ("positions", "scales", "rotations", "opacities", "colors")})


class JsonLog:
    """Append-only line-structured log, one JSON object per line."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w")

    def __call__(self, record: dict):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path) -> list[dict]:
    return [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def frame_name(i: int) -> str:
    return f"{i:04d}"


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
