"""Binary motion masks from flow magnitude, and fusion with the RGB frame."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_ALPHA = 0.4


@dataclass(frozen=True)
class MaskParams:
    alpha: float = DEFAULT_ALPHA
    # rescale each sequence's magnitudes to max 1 before thresholding
    normalize: bool = False

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")


def threshold_mask(magnitude, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """1 where ``magnitude >= alpha`` (inclusive), else 0."""
    if not alpha >= 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    return (np.asarray(magnitude) >= alpha).astype(np.uint8)


def normalize_magnitudes(magnitudes):
    """Scale a sequence of magnitude maps by their common maximum."""
    peak = max(float(np.max(m)) for m in magnitudes)
    if peak == 0.0:
        return [np.asarray(m, dtype=np.float64) for m in magnitudes]
    return [np.asarray(m, dtype=np.float64) / peak for m in magnitudes]


def align_sequence(masks, frame_count: int) -> list:
    """Pad ``frame_count - 1`` pairwise masks to one per frame by repeating the first."""
    if frame_count < 2:
        raise ValueError(f"need at least 2 frames, got {frame_count}")
    if len(masks) != frame_count - 1:
        raise ValueError(f"expected {frame_count - 1} masks for {frame_count} frames, got {len(masks)}")
    masks = list(masks)
    return [masks[0]] + masks


def fuse(frame, mask) -> np.ndarray:
    """Stack an ``(H, W, 3)`` frame and ``(H, W)`` mask into a ``(4, H, W)`` tensor (R, G, B, M)."""
    frame = np.asarray(frame)
    mask = np.asarray(mask)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) frame, got {frame.shape}")
    if mask.shape != frame.shape[:2]:
        raise ValueError(f"mask extents {mask.shape} differ from frame {frame.shape[:2]}")
    dtype = frame.dtype if np.issubdtype(frame.dtype, np.floating) else np.float64
    out = np.empty((4,) + mask.shape, dtype=dtype)
    out[:3] = frame.transpose(2, 0, 1)
    out[3] = (mask != 0)
    return out


def split_fused(x):
    """Inverse of :func:`fuse`: ``(frame (H,W,3), mask (H,W) uint8)``."""
    x = np.asarray(x)
    return x[:3].transpose(1, 2, 0), x[3].astype(np.uint8)
