"""Frame sequence -> cached flows -> aligned motion masks -> fused network input."""
from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .flow import HSParams, estimate_flow, flow_magnitude, read_flo, write_flo
from .imageio import ensure_dir, frame_name
from .motionmask import MaskParams, align_sequence, fuse, normalize_magnitudes, threshold_mask

PARAMS_FILE = "params.json"


def flo_name(index: int) -> str:
    return frame_name(index, ".flo")


def sequence_flows(frames, hs: HSParams = HSParams(), cache_dir=None) -> list:
    """Flows between consecutive frames; entry ``k`` is frame ``k`` -> ``k + 1``.

    Flows are rounded to float32 so cached and fresh results are identical.
    With ``cache_dir`` the flow for frame pair ``(k-1, k)`` is stored as
    ``frame_<k>.flo`` and reused when the solver settings match.
    """
    if len(frames) < 2:
        raise ValueError(f"need at least 2 frames, got {len(frames)}")
    tag = json.dumps(asdict(hs), sort_keys=True)
    cache = None
    if cache_dir is not None:
        cache = ensure_dir(cache_dir)
        meta = cache / PARAMS_FILE
        if not meta.is_file() or meta.read_text() != tag:
            for stale in cache.glob("*.flo"):
                stale.unlink()
            meta.write_text(tag)
    flows = []
    for k in range(1, len(frames)):
        path = cache / flo_name(k) if cache is not None else None
        if path is not None and path.is_file():
            flow = read_flo(path)
            if flow.shape[:2] == np.shape(frames[k])[:2]:
                flows.append(flow)
                continue
        flow = estimate_flow(frames[k - 1], frames[k], hs).astype(np.float32)
        if path is not None:
            write_flo(flow, path)
        flows.append(flow)
    return flows


def motion_masks(flows, frame_count: int, params: MaskParams = MaskParams()) -> list:
    mags = [flow_magnitude(f) for f in flows]
    if params.normalize:
        mags = normalize_magnitudes(mags)
    return align_sequence([threshold_mask(m, params.alpha) for m in mags], frame_count)


def sequence_masks(frames, hs: HSParams = HSParams(), params: MaskParams = MaskParams(), cache_dir=None) -> list:
    return motion_masks(sequence_flows(frames, hs, cache_dir), len(frames), params)


def fuse_sequence(frames, masks) -> np.ndarray:
    """``(N, 4, H, W)`` float32 network input."""
    return np.stack([fuse(f[:, :, :3], m) for f, m in zip(frames, masks)]).astype(np.float32)


def downscale_frame(frame, factor: int) -> np.ndarray:
    """Block-average by an integer factor (1 is a no-op)."""
    if factor == 1:
        return frame
    h, w = frame.shape[:2]
    h2, w2 = h // factor, w // factor
    x = frame[: h2 * factor, : w2 * factor]
    return x.reshape(h2, factor, w2, factor, -1).mean(axis=(1, 3))


def downscale_mask(mask, factor: int) -> np.ndarray:
    if factor == 1:
        return mask
    return (downscale_frame(mask[:, :, None].astype(np.float64), factor)[:, :, 0] >= 0.5).astype(np.uint8)


def default_cache_dir(first_frame_path, downscale: int = 1) -> Path:
    """``<sequence>/flows`` next to the directory holding the frames (``flows_x<k>`` when down-scaled)."""
    return Path(first_frame_path).resolve().parent.parent / scaled_cache_name("flows", downscale)


def scaled_cache_name(name: str, downscale: int) -> str:
    return name if downscale == 1 else f"{name}_x{downscale}"
