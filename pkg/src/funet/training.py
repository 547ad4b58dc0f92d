"""Loss, optimiser, dataset splitting and the training driver."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import SPLITS, UNASSIGNED, Manifest
from .flow import HSParams
from .imageio import load_frame, load_mask
from .model import FUNetConfig, save_checkpoint
from .motionmask import MaskParams
from .pipeline import default_cache_dir, downscale_frame, downscale_mask, fuse_sequence, sequence_masks

METRICS_NAME = "metrics.jsonl"


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy on raw scores.

    Uses ``max(z, 0) - z*y + log1p(exp(-|z|))``. Returns ``(loss, grad)`` with
    ``grad = (sigmoid(z) - y) / n`` in the dtype of ``logits``.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    if logits.shape != targets.shape:
        raise ValueError(f"logits {logits.shape} and targets {targets.shape} differ")
    if not np.isin(targets, (0, 1)).all():
        raise ValueError("targets must be 0 or 1")
    z = logits.astype(np.float64)
    y = targets.astype(np.float64)
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    # sigmoid, overflow-free in both directions
    e = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    grad = ((sig - y) / z.size).astype(logits.dtype if np.issubdtype(logits.dtype, np.floating) else np.float64)
    return loss, grad


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-8
    momentum: float = 0.9
    rms_decay: float = 0.99
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 1
    seed: int = 0
    fractions: tuple = (0.6, 0.2, 0.2)
    downscale: int = 1

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-9 or len(self.fractions) != 3:
            raise ValueError(f"split fractions must be three values summing to 1, got {self.fractions}")
        for name in ("learning_rate", "weight_decay", "momentum", "rms_decay", "eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.downscale < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and downscale >= 1 required")


@dataclass
class OptState:
    square_avg: dict
    momentum_buffer: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.items()},
            {k: np.zeros_like(v) for k, v in params.items()},
        )


def rmsprop_step(params: dict, grads: dict, state: OptState, config: TrainConfig = TrainConfig()):
    """One RMSProp update with momentum and L2 weight decay, in place.

    g = grad + wd*theta; sq = rho*sq + (1-rho)*g^2; buf = mu*buf + g/(sqrt(sq)+eps); theta -= lr*buf
    """
    rho, mu = config.rms_decay, config.momentum
    for name, theta in params.items():
        g = grads[name]
        if config.weight_decay:
            g = g + config.weight_decay * theta
        sq = state.square_avg[name]
        sq *= rho
        sq += (1.0 - rho) * g * g
        buf = state.momentum_buffer[name]
        buf *= mu
        buf += g / (np.sqrt(sq) + config.eps)
        theta -= config.learning_rate * buf
    state.step += 1
    return params, state


def split_manifest(manifest: Manifest, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> Manifest:
    """Assign whole sequences to train/val/test in seeded random order.

    Counts follow the fractions by largest remainder; every split with a
    positive fraction receives at least one sequence.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ValueError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    n = len(manifest.sequences)
    wanted = sum(f > 0 for f in fractions)
    if n < wanted:
        raise ValueError(f"{n} sequence(s) cannot fill {wanted} splits")
    raw = [f * n for f in fractions]
    counts = [int(np.floor(r)) for r in raw]
    order = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(3):
        if fractions[i] > 0 and counts[i] == 0:
            donor = max(range(3), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    perm = np.random.default_rng(seed).permutation(n)
    tags = [UNASSIGNED] * n
    pos = 0
    for split, count in zip(SPLITS, counts):
        for idx in perm[pos : pos + count]:
            tags[idx] = split
        pos += count
    seqs = [replace(s, split=t) for s, t in zip(manifest.sequences, tags)]
    return Manifest(seqs, manifest.root)


def load_sequence(manifest: Manifest, seq, hs: HSParams, mask_params: MaskParams, downscale: int = 1):
    """Fused inputs ``(N, 4, H, W)`` and targets ``(N, H, W)`` for one manifest sequence."""
    frames = [downscale_frame(load_frame(manifest.resolve(r.image))[:, :, :3], downscale) for r in seq.frames]
    targets = np.stack([downscale_mask(load_mask(manifest.resolve(r.mask)), downscale) for r in seq.frames])
    if len(frames) < 2:
        raise ValueError(f"sequence {seq.id}: need at least 2 frames")
    cache = default_cache_dir(manifest.resolve(seq.frames[0].image), downscale)
    masks = sequence_masks(frames, hs, mask_params, cache_dir=cache)
    return fuse_sequence(frames, masks), targets


@dataclass
class TrainResult:
    params: dict
    history: list = field(default_factory=list)
    best_epoch: int = 0
    manifest: Manifest | None = None


def train(
    manifest: Manifest,
    checkpoint_path,
    model_config: FUNetConfig = FUNetConfig(),
    config: TrainConfig = TrainConfig(),
    hs: HSParams = HSParams(),
    mask_params: MaskParams = MaskParams(),
    log=None,
) -> TrainResult:
    """Train on the manifest's train split, select on val Dice, write the best checkpoint.

    Sequences without a split tag are assigned with :func:`split_manifest`.
    ``metrics.jsonl`` is rewritten next to the checkpoint with one line per epoch.
    """
    from .estimator import FUNetSegmenter

    manifest.validate()
    if any(s.split == UNASSIGNED for s in manifest.sequences):
        manifest = split_manifest(manifest, config.fractions, config.seed)
    train_seqs = manifest.by_split("train")
    if not train_seqs:
        raise ValueError("manifest has no training sequences")
    divisor = model_config.divisor

    def load(seqs):
        xs, ys = [], []
        for seq in seqs:
            x, y = load_sequence(manifest, seq, hs, mask_params, config.downscale)
            if x.shape[2] % divisor or x.shape[3] % divisor:
                raise ValueError(f"sequence {seq.id}: extents {x.shape[2]}x{x.shape[3]} not divisible by {divisor}")
            xs.append(x)
            ys.append(y)
        return xs, ys

    x_train, y_train = load(train_seqs)
    x_val, y_val = load(manifest.by_split("val"))

    checkpoint_path = Path(checkpoint_path)
    metrics_path = checkpoint_path.with_name(METRICS_NAME)
    metrics_path.write_text("")

    def on_epoch(record):
        with open(metrics_path, "a") as fh:
            fh.write(json.dumps(record) + "\n")
        if log is not None:
            log(record)

    est = FUNetSegmenter(
        widths=model_config.widths,
        bottleneck=model_config.bottleneck,
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
        momentum=config.momentum,
        rms_decay=config.rms_decay,
        eps=config.eps,
        epochs=config.epochs,
        batch_size=config.batch_size,
        random_state=config.seed,
    )
    est.fit(x_train, y_train, X_val=x_val or None, y_val=y_val or None, on_epoch_end=on_epoch)
    save_checkpoint(est.params_, checkpoint_path, est.config_)
    _append_pipeline_settings(checkpoint_path, hs, mask_params, config.downscale)
    return TrainResult(est.params_, est.history_, est.best_epoch_, manifest)


def _append_pipeline_settings(checkpoint_path, hs: HSParams, mask_params: MaskParams, downscale: int) -> None:
    from .model import sidecar_path

    with open(sidecar_path(checkpoint_path), "a") as fh:
        fh.write(
            f"alpha={mask_params.alpha!r}\n"
            f"normalize={int(mask_params.normalize)}\n"
            f"smoothness={hs.smoothness!r}\n"
            f"iterations={hs.iterations}\n"
            f"levels={hs.levels}\n"
            f"warps={hs.warps}\n"
            f"downscale={downscale}\n"
        )
