"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np


def _stack(X, ndim, what):
    if isinstance(X, (list, tuple)):
        if not X:
            raise ValueError(f"empty list of {what}")
        parts = [np.asarray(x) for x in X]
        if any(p.ndim != ndim for p in parts):
            raise ValueError(f"every {what} block must be {ndim}-D")
        return np.concatenate(parts)
    X = np.asarray(X)
    if X.ndim != ndim:
        raise ValueError(f"expected a {ndim}-D array of {what}, got shape {X.shape}")
    return X


def check_fused(X, in_channels: int = 4, divisor: int = 4) -> np.ndarray:
    """``(N, C, H, W)`` float32 network input; lists of blocks are concatenated."""
    X = _stack(X, 4, "fused inputs")
    if X.shape[1] != in_channels:
        raise ValueError(f"expected {in_channels} channels, got {X.shape[1]}")
    h, w = X.shape[2:]
    if h % divisor or w % divisor:
        raise ValueError(f"extents {h}x{w} must be divisible by {divisor}")
    if not np.isfinite(X).all():
        raise ValueError("input contains NaN or inf")
    return X.astype(np.float32, copy=False)


def check_masks(y, shape=None) -> np.ndarray:
    """``(N, H, W)`` binary uint8 masks."""
    y = _stack(y, 3, "masks")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("masks must be binary (0/1)")
    if shape is not None and y.shape != shape:
        raise ValueError(f"masks have shape {y.shape}, expected {shape}")
    return y.astype(np.uint8, copy=False)


def check_sequences(X) -> list:
    """One ``(N, H, W, 3)`` frame sequence, or a list of them, as a list of float arrays."""
    seqs = list(X) if isinstance(X, (list, tuple)) else [X]
    out = []
    for s in seqs:
        s = np.asarray(s, dtype=np.float64)
        if s.ndim != 4 or s.shape[3] not in (3, 4):
            raise ValueError(f"expected (N, H, W, 3) frames, got {s.shape}")
        if s.shape[0] < 2:
            raise ValueError("each sequence needs at least 2 frames")
        if s.min() < 0 or s.max() > 1:
            raise ValueError("frame values must lie in [0, 1]")
        out.append(s[..., :3])
    return out
