"""Dice scoring and evaluation reports."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .flow import HSParams
from .imageio import ensure_dir, list_frames, load_frame, load_mask, save_frame
from .model import config_from_sidecar, load_checkpoint, predict_logits, read_sidecar, sidecar_path
from .motionmask import MaskParams
from .pipeline import default_cache_dir, downscale_frame, scaled_cache_name, fuse_sequence, sequence_masks
from .tensorops import sigmoid

REPORT_NAME = "eval_report.json"


def dice(pred, gt) -> float:
    """``2|A & B| / (|A| + |B|)``; two empty masks score 1."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask extents differ: {pred.shape} vs {gt.shape}")
    if not (np.isin(pred, (0, 1)).all() and np.isin(gt, (0, 1)).all()):
        raise ValueError("dice needs binary masks")
    a = pred.astype(bool)
    b = gt.astype(bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


@dataclass
class EvalReport:
    per_frame: list = field(default_factory=list)
    mean_dice: float = 0.0
    frame_count: int = 0
    threshold: float = 0.5

    @classmethod
    def from_scores(cls, scores, threshold: float = 0.5) -> "EvalReport":
        scores = [float(s) for s in scores]
        mean = float(np.mean(scores)) if scores else 0.0
        return cls(scores, mean, len(scores), threshold)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")
        return path


def compare_dirs(pred_dir, gt_dir, threshold: float = 0.5) -> EvalReport:
    preds = list_frames(pred_dir)
    gts = list_frames(gt_dir)
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions but {len(gts)} ground-truth masks")
    if not preds:
        raise ValueError(f"no masks in {pred_dir}")
    return EvalReport.from_scores([dice(load_mask(p), load_mask(g)) for p, g in zip(preds, gts)], threshold)


def pipeline_settings(checkpoint) -> tuple:
    """Flow and mask settings recorded in a checkpoint sidecar (defaults when absent)."""
    side = sidecar_path(checkpoint)
    fields = read_sidecar(side) if side.is_file() else {}
    hs = HSParams(
        smoothness=float(fields.get("smoothness", HSParams.smoothness)),
        iterations=int(fields.get("iterations", HSParams.iterations)),
        levels=int(fields.get("levels", HSParams.levels)),
        warps=int(fields.get("warps", HSParams.warps)),
    )
    mp = MaskParams(alpha=float(fields.get("alpha", MaskParams.alpha)), normalize=bool(int(fields.get("normalize", 0))))
    return hs, mp


def predict_sequence(checkpoint, frames, alpha=None, threshold: float = 0.5, cache_dir=None):
    """Binary masks for a list of ``(H, W, 3)`` frames."""
    side = sidecar_path(checkpoint)
    if not side.is_file():
        raise FileNotFoundError(f"checkpoint config sidecar missing: {side}")
    config = config_from_sidecar(side)
    params = load_checkpoint(checkpoint, config)
    factor = int(read_sidecar(side).get("downscale", 1))
    full = frames[0].shape[:2]
    frames = [downscale_frame(f, factor) for f in frames]
    h, w = frames[0].shape[:2]
    if h % config.divisor or w % config.divisor:
        raise ValueError(f"frame extents {h}x{w} must be divisible by {config.divisor}")
    hs, mp = pipeline_settings(checkpoint)
    if alpha is not None:
        mp = MaskParams(alpha=alpha, normalize=mp.normalize)
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir = cache_dir.with_name(scaled_cache_name(cache_dir.name, factor))
    x = fuse_sequence(frames, sequence_masks(frames, hs, mp, cache_dir))
    out = []
    for k in range(len(x)):
        prob = sigmoid(predict_logits(params, x[k : k + 1], config))[0, 0]
        mask = (prob >= threshold).astype(np.uint8)
        if factor != 1:
            mask = mask.repeat(factor, 0).repeat(factor, 1)
            mask = np.pad(mask, ((0, full[0] - mask.shape[0]), (0, full[1] - mask.shape[1])), mode="edge")
        out.append(mask)
    return out


def evaluate_sequence(checkpoint, frames_dir, gt_dir, alpha=None, threshold: float = 0.5) -> EvalReport:
    """Run the full inference pipeline on a frame directory and score it against ground truth."""
    frame_paths = list_frames(frames_dir)
    gt_paths = list_frames(gt_dir)
    if len(frame_paths) != len(gt_paths):
        raise ValueError(f"{len(frame_paths)} frames but {len(gt_paths)} ground-truth masks")
    if len(frame_paths) < 2:
        raise ValueError(f"need at least 2 frames in {frames_dir}")
    frames = [load_frame(p)[:, :, :3] for p in frame_paths]
    preds = predict_sequence(checkpoint, frames, alpha, threshold, default_cache_dir(frame_paths[0]))
    return EvalReport.from_scores([dice(p, load_mask(g)) for p, g in zip(preds, gt_paths)], threshold)


def overlay(frame, mask) -> np.ndarray:
    """Prediction drawn in red at 50% opacity over the frame."""
    frame = np.asarray(frame, dtype=np.float64)[:, :, :3]
    red = np.array([1.0, 0.0, 0.0])
    m = np.asarray(mask, dtype=bool)[:, :, None]
    return np.where(m, 0.5 * frame + 0.5 * red, frame)


def write_overlays(frames, masks, out_dir) -> list:
    out_dir = ensure_dir(out_dir)
    paths = []
    for k, (f, m) in enumerate(zip(frames, masks)):
        p = out_dir / (f"overlay_{k:06d}.png")
        save_frame(overlay(f, m), p)
        paths.append(p)
    return paths
