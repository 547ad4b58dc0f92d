"""Frame and mask I/O.

Frames are ``float64`` arrays of shape ``(H, W, C)`` with values in ``[0, 1]``.
Masks are ``uint8`` arrays of shape ``(H, W)`` holding only 0 and 1.
Only 8-bit PNG (gray, RGB, RGBA) and binary PGM (P5, maxval 255) are supported.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

FRAME_PATTERN = "frame_%06d"
IMAGE_SUFFIXES = (".png", ".pgm")

_PNG_MODES = {"L": 1, "RGB": 3, "RGBA": 4}
_SAVE_MODES = (1, 3, 4)


class FrameFormatError(ValueError):
    """Raised when an image file cannot be decoded into a frame."""


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    # header: magic, width, height, maxval separated by whitespace, '#' comments allowed
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise FrameFormatError(f"{path}: truncated PGM header")
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    magic, width, height, maxval = fields
    if magic != b"P5":
        raise FrameFormatError(f"{path}: magic={magic!r}, expected b'P5'")
    try:
        w, h, m = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise FrameFormatError(f"{path}: non-integer PGM header field") from exc
    if w <= 0 or h <= 0:
        raise FrameFormatError(f"{path}: width={w} height={h}")
    if m != 255:
        raise FrameFormatError(f"{path}: maxval={m}, only 8-bit (255) is supported")
    data = raw[pos : pos + w * h]
    if len(data) != w * h:
        raise FrameFormatError(f"{path}: raster has {len(data)} bytes, expected {w * h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 1)


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            if img.format != "PNG":
                raise FrameFormatError(f"{path}: format={img.format}, expected PNG or PGM")
            if img.mode not in _PNG_MODES:
                raise FrameFormatError(f"{path}: mode={img.mode}, expected 8-bit L, RGB or RGBA")
            arr = np.asarray(img, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FrameFormatError(f"{path}: header not recognised") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def read_bytes(path) -> np.ndarray:
    """Read raw 8-bit pixel data as ``uint8`` of shape ``(H, W, C)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"P5":
        return _read_pgm(path)
    return _read_png(path)


def load_frame(path) -> np.ndarray:
    """Load a PNG/PGM image; byte value ``p`` becomes ``p / 255``."""
    return read_bytes(path).astype(np.float64) / 255.0


def quantize(values: np.ndarray) -> np.ndarray:
    """Map unit-interval reals to bytes, rounding half up."""
    values = np.asarray(values, dtype=np.float64)
    if values.size and (np.nanmin(values) < 0.0 or np.nanmax(values) > 1.0 or np.isnan(values).any()):
        raise ValueError("frame values must lie in [0, 1]")
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def _write_bytes(arr: np.ndarray, path: Path) -> None:
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    if not path.parent.is_dir():
        raise FileNotFoundError(f"parent directory does not exist: {path.parent}")
    if path.suffix.lower() == ".pgm":
        if c != 1:
            raise ValueError(f"PGM holds one channel, got {c}")
        payload = b"P5\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(arr).tobytes()
        path.write_bytes(payload)
        return
    if c not in _SAVE_MODES:
        raise ValueError(f"unsupported channel count {c}")
    img = Image.fromarray(np.ascontiguousarray(arr[:, :, 0] if c == 1 else arr))
    img.save(path, format="PNG")


def save_frame(frame: np.ndarray, path) -> None:
    """Save a frame as PNG, or as PGM when the suffix is ``.pgm``."""
    path = Path(path)
    if path.is_dir():
        raise IsADirectoryError(f"target is a directory: {path}")
    frame = np.asarray(frame)
    _write_bytes(quantize(frame), path)


def to_grayscale(frame: np.ndarray) -> np.ndarray:
    """Luma ``0.299 R + 0.587 G + 0.114 B``; alpha is ignored. Returns ``(H, W, 1)``."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame[:, :, None]
    c = frame.shape[2]
    if c == 1:
        return frame
    if c not in (3, 4):
        raise ValueError(f"expected 1, 3 or 4 channels, got {c}")
    gray = 0.299 * frame[:, :, 0] + 0.587 * frame[:, :, 1] + 0.114 * frame[:, :, 2]
    lo = frame[:, :, :3].min(axis=2)
    hi = frame[:, :, :3].max(axis=2)
    # keep the convex-combination bound exact under rounding
    return np.clip(gray, lo, hi)[:, :, None]


def load_mask(path) -> np.ndarray:
    """Load a single-channel 0/255 image as a 0/1 ``uint8`` mask."""
    raw = read_bytes(path)
    if raw.shape[2] != 1:
        raise FrameFormatError(f"{path}: mask must have one channel, got {raw.shape[2]}")
    raw = raw[:, :, 0]
    if not np.isin(raw, (0, 255)).all():
        raise FrameFormatError(f"{path}: mask values must be 0 or 255")
    return (raw == 255).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    _write_bytes(mask.astype(np.uint8) * 255, Path(path))


def list_frames(directory) -> list[Path]:
    """Image files in ``directory`` in lexicographic (= temporal) order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def frame_name(index: int, suffix: str = ".png") -> str:
    return FRAME_PATTERN % index + suffix


def ensure_dir(path) -> Path:
    path = Path(path)
    os.makedirs(path, exist_ok=True)
    return path
