"""Dataset construction: manifests, chroma keying, compositing and synthetic sequences."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imageio import ensure_dir, frame_name, list_frames, load_frame, read_bytes, save_frame, save_mask

SPLITS = ("train", "val", "test")
UNASSIGNED = "unassigned"
MANIFEST_NAME = "manifest.json"


@dataclass
class FrameRecord:
    image: str
    mask: str


@dataclass
class Sequence:
    id: str
    split: str = UNASSIGNED
    frames: list = field(default_factory=list)


@dataclass
class Manifest:
    """Ordered sequences of (image, mask) records; relative paths resolve against ``root``."""

    sequences: list = field(default_factory=list)
    root: Path = Path(".")

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def by_split(self, split: str) -> list:
        return [s for s in self.sequences if s.split == split]

    def to_dict(self) -> dict:
        return {
            "sequences": [
                {"id": s.id, "split": s.split, "frames": [{"image": f.image, "mask": f.mask} for f in s.frames]}
                for s in self.sequences
            ]
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
            seqs = [
                Sequence(
                    id=str(s["id"]),
                    split=str(s.get("split", UNASSIGNED)),
                    frames=[FrameRecord(str(f["image"]), str(f["mask"])) for f in s["frames"]],
                )
                for s in doc["sequences"]
            ]
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: malformed manifest ({exc})") from None
        return cls(seqs, path.parent)

    def validate(self) -> None:
        """Check that every file exists and that each sequence has consistent extents."""
        ids = [s.id for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sequence ids in manifest")
        for seq in self.sequences:
            if seq.split not in SPLITS + (UNASSIGNED,):
                raise ValueError(f"sequence {seq.id}: unknown split {seq.split!r}")
            if not seq.frames:
                raise ValueError(f"sequence {seq.id}: no frames")
            extents = None
            for rec in seq.frames:
                for rel in (rec.image, rec.mask):
                    p = self.resolve(rel)
                    if not p.is_file():
                        raise FileNotFoundError(f"sequence {seq.id}: missing file {p}")
                    hw = read_bytes(p).shape[:2]
                    if extents is None:
                        extents = hw
                    elif hw != extents:
                        raise ValueError(f"sequence {seq.id}: {p} is {hw}, expected {extents}")


def _relative(path: Path, root: Path) -> str:
    try:
        return path.resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return str(path.resolve())


def parse_key(text: str) -> tuple:
    """``"00FF00"`` or ``"#00ff00"`` -> ``(0, 255, 0)``."""
    text = text.lstrip("#")
    if len(text) != 6:
        raise ValueError(f"key colour must be RRGGBB hex, got {text!r}")
    return tuple(int(text[i : i + 2], 16) for i in (0, 2, 4))


def chroma_key(frame, key=(0, 255, 0), tolerance: float = 0.25) -> np.ndarray:
    """Foreground mask: 0 where the RGB distance to ``key`` is within ``tolerance``."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"chroma keying needs an (H, W, 3) frame, got {frame.shape}")
    if tolerance < 0:
        raise ValueError(f"tolerance must be >= 0, got {tolerance}")
    dist = np.sqrt(((frame - np.asarray(key, dtype=np.float64) / 255.0) ** 2).sum(axis=2))
    return (dist > tolerance).astype(np.uint8)


def composite(fg, mask, bg) -> np.ndarray:
    """Hard composite: ``fg`` where ``mask`` is 1, ``bg`` elsewhere."""
    fg = np.asarray(fg)
    bg = np.asarray(bg)
    mask = np.asarray(mask)
    if fg.shape != bg.shape or mask.shape != fg.shape[:2]:
        raise ValueError(f"extent mismatch: fg {fg.shape}, mask {mask.shape}, bg {bg.shape}")
    return np.where(mask[:, :, None] != 0, fg, bg)


def compose_directory(fg_dir, bg_dir, out_dir, key=(0, 255, 0), tolerance: float = 0.25) -> Manifest:
    """Key every green-screen frame in ``fg_dir`` and composite it over cycling backgrounds."""
    fg_paths = list_frames(fg_dir)
    bg_paths = list_frames(bg_dir)
    if not fg_paths:
        raise ValueError(f"no frames in {fg_dir}")
    if not bg_paths:
        raise ValueError(f"no backgrounds in {bg_dir}")
    backgrounds = [load_frame(p)[:, :, :3] for p in bg_paths]
    out_dir = ensure_dir(out_dir)
    frames_dir = ensure_dir(out_dir / "frames")
    masks_dir = ensure_dir(out_dir / "masks")
    seq = Sequence(id=Path(fg_dir).resolve().name)
    for k, p in enumerate(fg_paths):
        fg = load_frame(p)
        if fg.shape[2] not in (3, 4):
            raise ValueError(f"{p}: expected a colour frame")
        fg = fg[:, :, :3]
        bg = backgrounds[k % len(backgrounds)]
        if bg.shape != fg.shape:
            raise ValueError(f"{p} is {fg.shape[1]}x{fg.shape[0]} but background {bg_paths[k % len(bg_paths)]} is {bg.shape[1]}x{bg.shape[0]}")
        mask = chroma_key(fg, key, tolerance)
        image_path = frames_dir / frame_name(k)
        mask_path = masks_dir / frame_name(k)
        save_frame(composite(fg, mask, bg), image_path)
        save_mask(mask, mask_path)
        seq.frames.append(FrameRecord(_relative(image_path, out_dir), _relative(mask_path, out_dir)))
    manifest = Manifest([seq], out_dir)
    manifest.save(out_dir / MANIFEST_NAME)
    return manifest


# -- synthetic head-and-shoulders sequences ---------------------------------

MAX_STEP = 1.8  # px/frame, below the 2 px cap so subpixel coverage changes stay inside it


def _smooth_noise(rng, shape, sigma):
    n = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return n / (np.abs(n).max() + 1e-12)


def _background(rng, h, w):
    # cool, desaturated palette
    base = np.array([rng.uniform(0.15, 0.45), rng.uniform(0.3, 0.6), rng.uniform(0.45, 0.8)])
    alt = np.clip(base + rng.uniform(-0.25, 0.25, 3), 0.05, 0.95)
    blend = 0.5 + 0.5 * _smooth_noise(rng, (h, w), 6.0)
    img = base * (1.0 - blend[:, :, None]) + alt * blend[:, :, None]
    img += 0.08 * _smooth_noise(rng, (h, w), 1.0)[:, :, None]
    return np.clip(img, 0.0, 1.0)


def _sample(tex, xs, ys):
    th, tw = tex.shape[:2]
    xs = np.clip(xs, 0, tw - 1.001)
    ys = np.clip(ys, 0, th - 1.001)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx, fy = xs - x0, ys - y0
    return (
        tex[y0, x0] * (1 - fx) * (1 - fy)
        + tex[y0, x0 + 1] * fx * (1 - fy)
        + tex[y0 + 1, x0] * (1 - fx) * fy
        + tex[y0 + 1, x0 + 1] * fx * fy
    )


@dataclass
class _Figure:
    cx: float
    cy: float
    rx: float
    ry: float
    shoulder_top: float
    neck_half: float
    base_half: float
    h: int
    w: int

    def coverage(self, ox: float, oy: float):
        """Head ellipse plus shoulder trapezoid, tested at pixel centres."""
        ys, xs = np.mgrid[0 : self.h, 0 : self.w].astype(np.float64)
        x = xs - (self.cx + ox)
        y = ys - (self.cy + oy)
        head = (x / self.rx) ** 2 + (y / self.ry) ** 2 <= 1.0
        top = self.shoulder_top
        depth = self.h - self.cy
        frac = np.clip((y - top) / max(depth - top, 1.0), 0.0, 1.0)
        half = self.neck_half + (self.base_half - self.neck_half) * np.sqrt(frac)
        body = (y >= top) & (np.abs(x) <= half)
        return head, body


def synth_sequence(out_dir, frames: int = 20, size=(64, 64), seed: int = 0, sequence_id: str | None = None) -> Manifest:
    """Render a textured head-and-shoulders figure drifting over a static textured background.

    Writes ``frames/``, ``masks/`` and ``manifest.json`` under ``out_dir``.
    The figure moves by a seeded random walk of at most ``MAX_STEP`` px/frame.
    """
    h, w = size
    if h % 4 or w % 4:
        raise ValueError(f"size {h}x{w} must be divisible by 4")
    if frames < 2:
        raise ValueError(f"need at least 2 frames, got {frames}")
    rng = np.random.default_rng(seed)
    out_dir = ensure_dir(out_dir)
    frames_dir = ensure_dir(out_dir / "frames")
    masks_dir = ensure_dir(out_dir / "masks")

    bg = _background(rng, h, w)
    rx = w * rng.uniform(0.12, 0.16)
    fig = _Figure(
        cx=w * rng.uniform(0.42, 0.58),
        cy=h * rng.uniform(0.34, 0.42),
        rx=rx,
        ry=rx * rng.uniform(1.15, 1.35),
        shoulder_top=rx * 1.1,
        neck_half=rx * 0.55,
        base_half=w * rng.uniform(0.32, 0.42),
        h=h,
        w=w,
    )
    skin = np.array([rng.uniform(0.75, 0.95), rng.uniform(0.5, 0.7), rng.uniform(0.35, 0.5)])
    shirt = np.array([rng.uniform(0.55, 0.9), rng.uniform(0.1, 0.45), rng.uniform(0.05, 0.35)])
    if rng.random() < 0.5:
        shirt = shirt[[0, 2, 1]]
    pad = 16
    tex = 0.14 * _smooth_noise(rng, (h + 2 * pad, w + 2 * pad), 1.2)

    ox = oy = 0.0
    vx, vy = rng.uniform(-1, 1) * MAX_STEP, 0.0
    limit_x, limit_y = w / 6.0, h / 16.0
    seq = Sequence(id=sequence_id or Path(out_dir).resolve().name)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for k in range(frames):
        if k:
            vx = 0.75 * vx + rng.normal(0.0, 0.7)
            vy = 0.6 * vy + rng.normal(0.0, 0.25)
            speed = np.hypot(vx, vy)
            if speed > MAX_STEP:
                vx, vy = vx * MAX_STEP / speed, vy * MAX_STEP / speed
            if abs(ox + vx) > limit_x:
                vx = -vx
            if abs(oy + vy) > limit_y:
                vy = -vy
            ox, oy = ox + vx, oy + vy
        head, body = fig.coverage(ox, oy)
        mask = head | body
        shade = _sample(tex, xs - ox + pad, ys - oy + pad)[:, :, None]
        colour = np.where(head[:, :, None], skin, shirt) + shade
        frame = np.clip(np.where(mask[:, :, None], colour, bg), 0.0, 1.0)
        image_path = frames_dir / frame_name(k)
        mask_path = masks_dir / frame_name(k)
        save_frame(frame, image_path)
        save_mask(mask.astype(np.uint8), mask_path)
        seq.frames.append(FrameRecord(_relative(image_path, out_dir), _relative(mask_path, out_dir)))
    manifest = Manifest([seq], out_dir)
    manifest.save(out_dir / MANIFEST_NAME)
    return manifest


def synth_corpus(out_dir, sequences: int = 10, frames: int = 20, size=(64, 64), seed: int = 0, fractions=None) -> Manifest:
    """Several synthetic sequences under ``out_dir/seq_NNN`` with one combined manifest.

    With ``fractions`` the sequences are also assigned to train/val/test.
    """
    from .training import split_manifest

    if sequences < 1:
        raise ValueError(f"need at least one sequence, got {sequences}")
    out_dir = ensure_dir(out_dir)
    seeds = np.random.SeedSequence(seed).generate_state(sequences)
    combined = Manifest([], out_dir)
    for i in range(sequences):
        sub = synth_sequence(out_dir / f"seq_{i:03d}", frames, size, int(seeds[i]), sequence_id=f"seq_{i:03d}")
        seq = sub.sequences[0]
        seq.frames = [
            FrameRecord(_relative(sub.resolve(f.image), out_dir), _relative(sub.resolve(f.mask), out_dir))
            for f in seq.frames
        ]
        combined.sequences.append(seq)
    if fractions is not None:
        combined = split_manifest(combined, fractions, seed)
    combined.save(out_dir / MANIFEST_NAME)
    return combined
