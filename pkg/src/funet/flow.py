"""Coarse-to-fine Horn-Schunck optical flow.

Flow fields are ``(H, W, 2)`` arrays holding ``(u, v)`` in pixels per frame,
``u`` horizontal and ``v`` vertical. A flow maps frame-1 pixel ``x`` to
``x + flow(x)`` in frame 2.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from .imageio import to_grayscale

FLO_MAGIC = 202021.25
MIN_LEVEL_EXTENT = 8


@dataclass(frozen=True)
class HSParams:
    """Solver settings.

    ``smoothness`` weighs the smoothness term against brightness constancy and
    is expressed in 8-bit intensity units (intensities are rescaled to 0..255
    inside the solver).
    """

    smoothness: float = 15.0
    iterations: int = 100
    levels: int = 3
    warps: int = 2

    def __post_init__(self):
        if not self.smoothness > 0:
            raise ValueError(f"smoothness must be > 0, got {self.smoothness}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.warps < 1:
            raise ValueError(f"warps must be >= 1, got {self.warps}")


def _plane(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[2] != 1:
            img = to_grayscale(img)
        img = img[:, :, 0]
    if img.ndim != 2:
        raise ValueError(f"expected a single-channel image, got shape {img.shape}")
    return img


def gaussian_kernel(size: int = 5, sigma: float = 1.0) -> np.ndarray:
    r = size // 2
    k = np.exp(-(np.arange(-r, r + 1, dtype=np.float64) ** 2) / (2.0 * sigma**2))
    return k / k.sum()


def blur(img: np.ndarray) -> np.ndarray:
    """5x5 separable Gaussian (sigma 1) with replicated borders."""
    k = gaussian_kernel()
    return correlate1d(correlate1d(img, k, axis=0, mode="nearest"), k, axis=1, mode="nearest")


def build_pyramid(img, levels: int) -> list[np.ndarray]:
    """Gaussian pyramid, full resolution first; each level halves (floor) both extents."""
    img = _plane(img)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    need = MIN_LEVEL_EXTENT * 2 ** (levels - 1)
    if min(img.shape) < need:
        raise ValueError(f"image {img.shape[1]}x{img.shape[0]} too small for {levels} levels (needs >= {need})")
    pyramid = [img]
    for _ in range(levels - 1):
        prev = blur(pyramid[-1])
        h, w = prev.shape
        pyramid.append(prev[: h // 2 * 2 : 2, : w // 2 * 2 : 2])
    return pyramid


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def warp_bilinear(img, flow) -> np.ndarray:
    """Sample ``img`` at ``(x + u, y + v)``; coordinates outside clamp to the border."""
    plane = _plane(img)
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != plane.shape + (2,):
        raise ValueError(f"flow shape {flow.shape} does not match image {plane.shape}")
    ys, xs = np.mgrid[0 : plane.shape[0], 0 : plane.shape[1]].astype(np.float64)
    out = _bilinear(plane, xs + flow[:, :, 0], ys + flow[:, :, 1])
    return out[:, :, None] if np.ndim(img) == 3 else out


def upsample_flow(flow: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a flow field to ``shape`` with vectors scaled by 2."""
    hs, ws = flow.shape[:2]
    h, w = shape
    ys = (np.arange(h) + 0.5) * (hs / h) - 0.5
    xs = (np.arange(w) + 0.5) * (ws / w) - 0.5
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([_bilinear(flow[:, :, i], gx, gy) for i in range(2)], axis=-1) * 2.0


def _replicate(p: np.ndarray) -> np.ndarray:
    return np.pad(p, 1, mode="edge")


def _central_diff(p: np.ndarray):
    q = _replicate(p)
    dx = 0.5 * (q[1:-1, 2:] - q[1:-1, :-2])
    dy = 0.5 * (q[2:, 1:-1] - q[:-2, 1:-1])
    return dx, dy


def _neighbour_mean(p: np.ndarray) -> np.ndarray:
    q = _replicate(p)
    return 0.25 * (q[:-2, 1:-1] + q[2:, 1:-1] + q[1:-1, :-2] + q[1:-1, 2:])


def hs_iterate(img1, img2, init=None, params: HSParams = HSParams()) -> np.ndarray:
    """Jacobi Horn-Schunck iterations linearised around ``init``.

    ``img2`` is warped by ``init``; the brightness constraint is linearised
    about ``init`` while the smoothness term acts on the total flow, so the
    returned field is the refined total flow (``init`` plus the increment).
    """
    i1 = _plane(img1) * 255.0
    i2 = _plane(img2) * 255.0
    if i1.shape != i2.shape:
        raise ValueError(f"frame extents differ: {i1.shape} vs {i2.shape}")
    if init is None:
        init = np.zeros(i1.shape + (2,))
    init = np.asarray(init, dtype=np.float64)
    i2w = warp_bilinear(i2, init)

    dx1, dy1 = _central_diff(i1)
    dx2, dy2 = _central_diff(i2w)
    ix = 0.5 * (dx1 + dx2)
    iy = 0.5 * (dy1 + dy2)
    it = i2w - i1
    denom = params.smoothness**2 + ix**2 + iy**2

    u0, v0 = init[:, :, 0], init[:, :, 1]
    u, v = u0.copy(), v0.copy()
    for _ in range(params.iterations):
        ubar = _neighbour_mean(u)
        vbar = _neighbour_mean(v)
        t = (ix * (ubar - u0) + iy * (vbar - v0) + it) / denom
        u = ubar - ix * t
        v = vbar - iy * t
    return np.stack([u, v], axis=-1)


def estimate_flow(frame1, frame2, params: HSParams = HSParams()) -> np.ndarray:
    """Flow from ``frame1`` to ``frame2`` (colour frames are converted to luma)."""
    g1, g2 = _plane(frame1), _plane(frame2)
    if g1.shape != g2.shape:
        raise ValueError(f"frame extents differ: {g1.shape} vs {g2.shape}")
    p1 = build_pyramid(g1, params.levels)
    p2 = build_pyramid(g2, params.levels)
    flow = np.zeros(p1[-1].shape + (2,))
    for level in range(params.levels - 1, -1, -1):
        if flow.shape[:2] != p1[level].shape:
            flow = upsample_flow(flow, p1[level].shape)
        for _ in range(params.warps):
            flow = hs_iterate(p1[level], p2[level], flow, params)
    return flow


def flow_magnitude(flow) -> np.ndarray:
    flow = np.asarray(flow, dtype=np.float64)
    return np.hypot(flow[..., 0], flow[..., 1])


def endpoint_error(flow, truth) -> np.ndarray:
    return flow_magnitude(np.asarray(flow, dtype=np.float64) - np.asarray(truth, dtype=np.float64))


def cost_volume(f1, fw, radius: int) -> np.ndarray:
    """Normalised correlation between ``f1 (C,H,W)`` and ``fw (C,H,W)``.

    Entry ``[k, y, x]`` is ``f1[:, y, x] . fw[:, y+dy, x+dx] / C`` with
    displacements enumerated ``dy`` outer, ``dx`` inner over ``-radius..radius``.
    Out-of-bounds partners contribute zero.
    """
    f1 = np.asarray(f1, dtype=np.float64)
    fw = np.asarray(fw, dtype=np.float64)
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if f1.shape != fw.shape or f1.ndim != 3:
        raise ValueError(f"feature shapes must match as (C,H,W): {f1.shape} vs {fw.shape}")
    c, h, w = f1.shape
    r = radius
    padded = np.pad(fw, ((0, 0), (r, r), (r, r)))
    out = np.empty(((2 * r + 1) ** 2, h, w))
    k = 0
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            shifted = padded[:, r + dy : r + dy + h, r + dx : r + dx + w]
            out[k] = (f1 * shifted).sum(axis=0) / c
            k += 1
    return out


def patch_features(img, size: int = 3) -> np.ndarray:
    """Stack of the ``size x size`` neighbourhood intensities, shape ``(size**2, H, W)``."""
    plane = _plane(img)
    r = size // 2
    q = np.pad(plane, r, mode="edge")
    h, w = plane.shape
    return np.stack([q[i : i + h, j : j + w] for i in range(size) for j in range(size)])


def write_flo(flow, path) -> None:
    """Middlebury ``.flo``: magic, width, height, then interleaved little-endian float32 (u, v)."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"expected (H, W, 2) flow, got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


class FloFormatError(ValueError):
    pass


def read_flo(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FloFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, w, h = struct.unpack("<fii", raw[:12])
    if magic != FLO_MAGIC:
        raise FloFormatError(f"{path}: bad magic {magic!r}, expected {FLO_MAGIC}")
    if w <= 0 or h <= 0:
        raise FloFormatError(f"{path}: bad extents width={w} height={h}")
    n = 2 * w * h * 4
    if len(raw) - 12 < n:
        raise FloFormatError(f"{path}: truncated data ({len(raw) - 12} of {n} bytes)")
    return np.frombuffer(raw[12 : 12 + n], dtype="<f4").reshape(h, w, 2).astype(np.float32)
