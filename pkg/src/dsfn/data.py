"""Synthesis of low-resolution, low-frame-rate, blurry training data from
sharp high-fps sequences, plus a deterministic toy-video generator so the
whole pipeline runs at desk scale.

A 240 fps sharp sequence is reduced to 30 fps blurry frames by averaging 11
consecutive frames per output frame with a stride of 8, then bicubic
downscaling. Ground truth stays at full resolution: the keyframe for window k
is the window's central sharp frame (index 8k+5) and the intermediate between
keyframes k and k+1 is sharp frame 8k+9, the temporal midpoint of the two
window centers.

Disk layout: ``root/{sharp|blurry_lr|gt_hr}/<seq_id>/`` holding zero-padded
``000000.png`` frames and a ``manifest.json`` per sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, ShapeError

BLUR_WINDOW = 11
BLUR_STRIDE = 8


@dataclass
class SharpSequence:
    id: str
    fps: int
    frames: np.ndarray  # (n, 3, h, w) float32 in [0, 1]


@dataclass
class TrainingSample:
    """4 blurry low-res inputs and the 5 sharp high-res targets they predict."""

    inputs: np.ndarray  # (4, 3, h, w)
    gt: np.ndarray      # (5, 3, r*h, r*w)
    provenance: tuple   # (sequence id, window index)


@dataclass
class AugmentConfig:
    crop: int | None = 256      # ground-truth-scale crop edge; None disables
    flip_h: bool = True
    flip_v: bool = True
    jitter: float = 0.1         # +-fraction for brightness/contrast/saturation
    noise_sigma: float = 0.1    # stddev of input noise, variance 0.01
    seed: int = 0


# ---------------------------------------------------------------------------
# bicubic resampling


def _cubic_weights(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    at = np.abs(t)
    near = (a + 2) * at**3 - (a + 3) * at**2 + 1
    far = a * at**3 - 5 * a * at**2 + 8 * a * at - 4 * a
    return np.where(at <= 1, near, np.where(at < 2, far, 0.0))


def _resize_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = arr.shape[axis]
    src = (np.arange(out_len) + 0.5) * (in_len / out_len) - 0.5
    base = np.floor(src).astype(np.int64)
    taps = base[:, None] + np.arange(-1, 3)[None, :]           # (out, 4)
    wgt = _cubic_weights(src[:, None] - taps)
    wgt /= wgt.sum(axis=1, keepdims=True)                      # exact unit DC gain
    taps = np.clip(taps, 0, in_len - 1)                        # edge clamp
    moved = np.moveaxis(arr, axis, -1)
    gathered = moved[..., taps]                                # (..., out, 4)
    out = np.einsum("...ok,ok->...o", gathered, wgt)
    return np.moveaxis(out, -1, axis)


def resize_to(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resample (a = -0.5, edge clamped) to explicit dims."""
    if out_h <= 0 or out_w <= 0:
        raise ShapeError(f"resize target {out_h}x{out_w} has a zero dimension")
    out = _resize_axis(img.astype(np.float64), out_h, axis=-2)
    out = _resize_axis(out, out_w, axis=-1)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def bicubic_resize(img: np.ndarray, scale: float) -> np.ndarray:
    """Resize by a scale factor; output dims are round(input * scale)."""
    if scale <= 0:
        raise ShapeError(f"scale must be positive, got {scale}")
    h, w = img.shape[-2], img.shape[-1]
    return resize_to(img, int(round(h * scale)), int(round(w * scale)))


# ---------------------------------------------------------------------------
# blur synthesis


def make_blurry(frames, window: int = BLUR_WINDOW) -> np.ndarray:
    """Average ``window`` consecutive sharp frames into one blurry frame."""
    if len(frames) != window:
        raise ShapeError(f"make_blurry needs exactly {window} frames, got {len(frames)}")
    stack = np.asarray(frames, dtype=np.float32)
    return stack.mean(axis=0)


def degrade_sequence(seq: SharpSequence, r: int, window: int = BLUR_WINDOW,
                     stride: int = BLUR_STRIDE) -> tuple[np.ndarray, np.ndarray]:
    """Blurry low-res frames plus full-resolution ground truth.

    Returns ``(blurry_lr, gt_hr)`` where blurry frame k averages sharp frames
    ``stride*k .. stride*k+window-1`` and is downscaled by 1/r, and gt holds
    2*n_blurry-1 frames alternating keyframe / intermediate.
    """
    n = len(seq.frames)
    if n < window + stride:
        raise DataError(
            f"sequence {seq.id}: {n} frames is too short (need >= {window + stride})"
        )
    n_blurry = (n - window) // stride + 1
    center = window // 2
    inter = center + stride // 2
    h, w = seq.frames.shape[-2], seq.frames.shape[-1]
    if h % r or w % r:
        raise DataError(f"sequence {seq.id}: dims {h}x{w} not divisible by scale {r}")

    blurry = np.stack([
        bicubic_resize(make_blurry(seq.frames[stride * k:stride * k + window], window), 1.0 / r)
        for k in range(n_blurry)
    ])
    gt = []
    for k in range(n_blurry):
        gt.append(seq.frames[stride * k + center])
        if k < n_blurry - 1:
            gt.append(seq.frames[stride * k + inter])
    return blurry, np.stack(gt)


def extract_windows(seq_id: str, blurry: np.ndarray, gt: np.ndarray) -> list[TrainingSample]:
    """All 4-input training windows of a degraded sequence."""
    n_blurry = len(blurry)
    samples = []
    for k in range(n_blurry - 3):
        samples.append(TrainingSample(
            inputs=blurry[k:k + 4],
            gt=gt[2 * k + 1:2 * k + 6],
            provenance=(seq_id, k),
        ))
    return samples


# ---------------------------------------------------------------------------
# augmentation


_LUMA = np.array([0.299, 0.587, 0.114], np.float32)


def _color_jitter(frames: np.ndarray, brightness: float, contrast: float,
                  saturation: float) -> np.ndarray:
    out = frames * brightness
    out = 0.5 + (out - 0.5) * contrast
    luma = np.tensordot(_LUMA, out, axes=([0], [1]))[:, None]
    out = luma + (out - luma) * saturation
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment(sample: TrainingSample, cfg: AugmentConfig,
            rng: np.random.Generator | int | None = None) -> TrainingSample:
    """One consistent random crop / flip / jitter across every frame of the
    sample; Gaussian noise goes on the inputs only. Deterministic given the
    generator state."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    elif isinstance(rng, int):
        rng = np.random.default_rng(rng)

    inputs = sample.inputs
    gt = sample.gt
    in_h, in_w = inputs.shape[-2], inputs.shape[-1]
    gt_h, gt_w = gt.shape[-2], gt.shape[-1]
    r = gt_h // in_h

    if cfg.crop is not None:
        if cfg.crop % r:
            raise ShapeError(f"crop {cfg.crop} is not divisible by scale {r}")
        if cfg.crop > gt_h or cfg.crop > gt_w:
            raise ShapeError(f"crop {cfg.crop} exceeds frame size {gt_h}x{gt_w}")
        ci = cfg.crop // r
        iy = int(rng.integers(0, in_h - ci + 1))
        ix = int(rng.integers(0, in_w - ci + 1))
        inputs = inputs[..., iy:iy + ci, ix:ix + ci]
        gt = gt[..., r * iy:r * iy + cfg.crop, r * ix:r * ix + cfg.crop]

    if cfg.flip_h and rng.random() < 0.5:
        inputs = np.flip(inputs, axis=-1)
        gt = np.flip(gt, axis=-1)
    if cfg.flip_v and rng.random() < 0.5:
        inputs = np.flip(inputs, axis=-2)
        gt = np.flip(gt, axis=-2)

    inputs = np.ascontiguousarray(inputs)
    gt = np.ascontiguousarray(gt)

    if cfg.jitter > 0:
        b, c, s = rng.uniform(1 - cfg.jitter, 1 + cfg.jitter, size=3)
        inputs = _color_jitter(inputs, b, c, s)
        gt = _color_jitter(gt, b, c, s)

    if cfg.noise_sigma > 0:
        noise = rng.normal(0.0, cfg.noise_sigma, size=inputs.shape).astype(np.float32)
        inputs = np.clip(inputs + noise, 0.0, 1.0)

    return TrainingSample(inputs=inputs, gt=gt, provenance=sample.provenance)


# ---------------------------------------------------------------------------
# toy video generator


def toy_video_gen(seed: int, n_frames: int, height: int, width: int,
                  n_shapes: int = 4, fps: int = 240, seq_id: str | None = None
                  ) -> SharpSequence:
    """Colored rectangles and disks drifting over a textured background.

    Shapes move 1-4 px/frame on linear plus sinusoidal trajectories, enough
    for a clearly visible streak when 11 frames are averaged. Same seed, same
    sequence.
    """
    if height < 32 or width < 32:
        raise ShapeError(f"toy video needs dims >= 32, got {height}x{width}")
    rng = np.random.default_rng(seed)

    coarse = rng.uniform(0.15, 0.85, size=(3, max(2, height // 8), max(2, width // 8)))
    mid = rng.uniform(-0.06, 0.06, size=(3, max(2, height // 4), max(2, width // 4)))
    background = (resize_to(coarse, height, width)
                  + resize_to(mid + 0.5, height, width) - 0.5)
    background = np.clip(background, 0.02, 0.98).astype(np.float32)

    shapes = []
    for _ in range(n_shapes):
        speed = rng.uniform(1.0, 2.2)  # px/frame; a 10-22 px streak per blur window
        angle = rng.uniform(0, 2 * np.pi)
        shapes.append({
            "kind": "disk" if rng.random() < 0.5 else "rect",
            "color": rng.uniform(0.0, 1.0, size=3).astype(np.float32),
            "size": rng.uniform(min(height, width) / 10, min(height, width) / 6),
            "pos": np.array([rng.uniform(0, height), rng.uniform(0, width)]),
            "vel": speed * np.array([np.sin(angle), np.cos(angle)]),
            "amp": rng.uniform(0.0, 2.0, size=2),
            "period": rng.uniform(24.0, 64.0),
            "phase": rng.uniform(0, 2 * np.pi),
        })

    ys = np.arange(height, dtype=np.float32)[:, None]
    xs = np.arange(width, dtype=np.float32)[None, :]
    frames = np.empty((n_frames, 3, height, width), np.float32)
    for t in range(n_frames):
        img = background.copy()
        for sh in shapes:
            wobble = sh["amp"] * np.sin(2 * np.pi * t / sh["period"] + sh["phase"])
            cy, cx = sh["pos"] + sh["vel"] * t + wobble
            # wrap so a shape never leaves the canvas entirely
            size = sh["size"]
            cy = (cy + size) % (height + 2 * size) - size
            cx = (cx + size) % (width + 2 * size) - size
            if sh["kind"] == "disk":
                dist = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2)
                cov = np.clip(sh["size"] + 0.5 - dist, 0.0, 1.0)
            else:
                cov_y = np.clip(np.minimum(ys - (cy - sh["size"]), (cy + sh["size"]) - ys) + 0.5,
                                0.0, 1.0)
                cov_x = np.clip(np.minimum(xs - (cx - sh["size"]), (cx + sh["size"]) - xs) + 0.5,
                                0.0, 1.0)
                cov = cov_y * cov_x
            img = img * (1 - cov) + sh["color"][:, None, None] * cov
        frames[t] = img
    sid = seq_id if seq_id is not None else f"toy{seed:05d}"
    return SharpSequence(id=sid, fps=fps, frames=frames)


# ---------------------------------------------------------------------------
# disk I/O


def write_png(path, frame: np.ndarray) -> None:
    arr = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr.transpose(1, 2, 0), "RGB").save(path, format="PNG")


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), np.float32)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    return (arr / 255.0).transpose(2, 0, 1)


def write_sequence(seq_dir, frames: np.ndarray, seq_id: str, fps: int) -> None:
    seq_dir = Path(seq_dir)
    seq_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, frame in enumerate(frames):
        name = f"{i:06d}.png"
        write_png(seq_dir / name, frame)
        files.append(name)
    manifest = {
        "id": seq_id,
        "fps": fps,
        "frame_count": len(frames),
        "width": int(frames.shape[-1]),
        "height": int(frames.shape[-2]),
        "files": files,
    }
    with open(seq_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def read_sequence(seq_dir) -> tuple[np.ndarray, dict]:
    seq_dir = Path(seq_dir)
    manifest_path = seq_dir / "manifest.json"
    if manifest_path.is_file():
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        files = manifest["files"]
    else:
        files = sorted(p.name for p in seq_dir.glob("*.png"))
        if not files:
            raise DataError(f"no manifest.json and no PNG frames in {seq_dir}")
        manifest = {"id": seq_dir.name, "fps": 0, "frame_count": len(files), "files": files}
    frames = np.stack([read_png(seq_dir / name) for name in files])
    return frames, manifest


def sequence_ids(root, kind: str) -> list[str]:
    base = Path(root) / kind
    if not base.is_dir():
        raise DataError(f"dataset tree {root} has no {kind}/ directory")
    return sorted(p.name for p in base.iterdir() if p.is_dir())


def write_degraded(root, seq: SharpSequence, r: int) -> tuple[int, int]:
    """Degrade one sharp sequence and store blurry_lr + gt_hr trees."""
    blurry, gt = degrade_sequence(seq, r)
    root = Path(root)
    write_sequence(root / "blurry_lr" / seq.id, blurry, seq.id, seq.fps // BLUR_STRIDE)
    write_sequence(root / "gt_hr" / seq.id, gt, seq.id, 2 * seq.fps // BLUR_STRIDE)
    return len(blurry), len(gt)


def load_training_windows(root) -> list[TrainingSample]:
    """Every 4-frame window of every degraded sequence under ``root``."""
    samples = []
    for sid in sequence_ids(root, "blurry_lr"):
        blurry, _ = read_sequence(Path(root) / "blurry_lr" / sid)
        gt, _ = read_sequence(Path(root) / "gt_hr" / sid)
        if len(gt) != 2 * len(blurry) - 1:
            raise DataError(
                f"sequence {sid}: {len(blurry)} blurry frames need {2 * len(blurry) - 1} "
                f"gt frames, found {len(gt)}"
            )
        samples.extend(extract_windows(sid, blurry, gt))
    if not samples:
        raise DataError(f"no training windows found under {root}")
    return samples
