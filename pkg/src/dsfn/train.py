"""Dual-level mean-absolute-error loss, Adam, and the training loop.

The loss weighs the five level-1 frames with 1/5 and the three level-2
frames with 1/3; each frame contributes the mean absolute difference to its
ground truth over all pixels and channels.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import AugmentConfig, TrainingSample, augment
from .errors import DataError, NumericError, ShapeError
from .model import TwoLevelDSFN
from .tensor import Tensor, add, backward, mean_abs, scale, subtract

LEVEL1_WEIGHT = 1.0 / 5.0
LEVEL2_WEIGHT = 1.0 / 3.0


def dsfn_loss_terms(level1, level2, gt) -> tuple[Tensor, Tensor, Tensor]:
    """(total, level-1 term, level-2 term); level 2 targets gt[1:4]."""
    if len(level1) != 5 or len(level2) != 3 or len(gt) != 5:
        raise ShapeError(
            f"loss expects 5 level-1, 3 level-2 and 5 gt frames, "
            f"got {len(level1)}/{len(level2)}/{len(gt)}"
        )
    for pred, target in zip(level1, gt):
        if pred.data.shape != target.data.shape:
            raise ShapeError(
                f"loss: prediction {pred.data.shape} vs ground truth {target.data.shape}"
            )
    t1 = mean_abs(subtract(level1[0], gt[0]))
    for pred, target in zip(level1[1:], gt[1:]):
        t1 = add(t1, mean_abs(subtract(pred, target)))
    t1 = scale(t1, LEVEL1_WEIGHT)
    t2 = mean_abs(subtract(level2[0], gt[1]))
    for pred, target in zip(level2[1:], gt[2:4]):
        t2 = add(t2, mean_abs(subtract(pred, target)))
    t2 = scale(t2, LEVEL2_WEIGHT)
    return add(t1, t2), t1, t2


def dsfn_loss(level1, level2, gt) -> Tensor:
    return dsfn_loss_terms(level1, level2, gt)[0]


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        missing = [name for name, p in self.params.items() if p.grad is None]
        if missing:
            raise ShapeError(f"Adam.step: no gradient for {missing[:3]} "
                             f"(+{max(0, len(missing) - 3)} more)")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict:
        out = {"optim.step": np.array([self.step_count], np.float32)}
        for name in self.params:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict) -> None:
        if "optim.step" not in arrays:
            raise DataError("checkpoint holds no optimizer state to resume from")
        self.step_count = int(arrays["optim.step"][0])
        for name, p in self.params.items():
            for slot, store in (("m", self.m), ("v", self.v)):
                key = f"optim.{slot}.{name}"
                if key not in arrays:
                    raise DataError(f"optimizer state missing {key}")
                arr = arrays[key].astype(p.data.dtype).reshape(p.data.shape)
                store[name] = arr.copy()


@dataclass
class TrainSettings:
    steps: int = 500
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 500
    augment: bool = True
    crop: int | None = 256
    flip_h: bool = True
    flip_v: bool = True
    jitter: float = 0.1
    noise_sigma: float = 0.1


def frames_to_tensors(stack: np.ndarray, dtype=np.float32) -> list[Tensor]:
    """Split an (n, C, H, W) stack into n single-frame batch-1 tensors."""
    return [Tensor(stack[i:i + 1].astype(dtype, copy=True)) for i in range(len(stack))]


def training_step(model: TwoLevelDSFN, opt: Adam, sample: TrainingSample
                  ) -> tuple[float, float, float]:
    """Forward, loss, backward and one Adam update; returns loss components."""
    frames = frames_to_tensors(sample.inputs, model.dtype)
    gt = frames_to_tensors(sample.gt, model.dtype)
    level1, level2 = model.forward(frames, clip=True)
    total, t1, t2 = dsfn_loss_terms(level1, level2, gt)
    loss_val = float(total.data)
    if not np.isfinite(loss_val):
        raise NumericError(f"non-finite training loss at step {opt.step_count + 1}")
    backward(total)
    opt.step()
    opt.zero_grad()
    return loss_val, float(t1.data), float(t2.data)


def _pick_sample(windows: list[TrainingSample], settings: TrainSettings, step: int
                 ) -> TrainingSample:
    rng = np.random.default_rng([settings.seed, step])
    sample = windows[int(rng.integers(len(windows)))]
    if settings.augment:
        cfg = AugmentConfig(crop=settings.crop, flip_h=settings.flip_h,
                            flip_v=settings.flip_v, jitter=settings.jitter,
                            noise_sigma=settings.noise_sigma)
        sample = augment(sample, cfg, rng)
    return sample


def save_training_checkpoint(path, model: TwoLevelDSFN, opt: Adam) -> None:
    arrays = dict(model.state_arrays())
    arrays.update(ckpt.config_to_meta(model.cfg))
    arrays.update(opt.state_arrays())
    ckpt.save_checkpoint(path, arrays)


def train(windows: list[TrainingSample], model: TwoLevelDSFN,
          settings: TrainSettings, out_dir, resume_from=None) -> dict:
    """Optimize the model over randomly drawn (optionally augmented) windows.

    Sample choice and augmentation derive from (seed, step), so a resumed run
    continues the exact trajectory of an uninterrupted one. Writes
    ``loss.csv``, periodic checkpoints and ``ckpt_final.bin`` under
    ``out_dir``; returns a small summary dict.
    """
    if not windows:
        raise DataError("training needs at least one window")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    opt = Adam(model.named_params(), lr=settings.lr, beta1=settings.beta1,
               beta2=settings.beta2, eps=settings.eps)
    start_step = 0
    if resume_from is not None:
        arrays = ckpt.load_checkpoint(resume_from)
        model.load_state_arrays(arrays)
        opt.load_state_arrays(arrays)
        start_step = opt.step_count

    log_path = out_dir / "loss.csv"
    mode = "a" if (resume_from is not None and log_path.exists()) else "w"
    first_loss = last_loss = None
    with open(log_path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["step", "loss", "level1_loss", "level2_loss", "wall_ms"])
        for step in range(start_step + 1, settings.steps + 1):
            t0 = time.perf_counter()
            sample = _pick_sample(windows, settings, step)
            loss_val, l1_val, l2_val = training_step(model, opt, sample)
            wall_ms = (time.perf_counter() - t0) * 1000.0
            writer.writerow([step, f"{loss_val:.8f}", f"{l1_val:.8f}",
                             f"{l2_val:.8f}", f"{wall_ms:.2f}"])
            if first_loss is None:
                first_loss = loss_val
            last_loss = loss_val
            if settings.checkpoint_every and step % settings.checkpoint_every == 0:
                save_training_checkpoint(out_dir / f"ckpt_step_{step:06d}.bin", model, opt)
    save_training_checkpoint(out_dir / "ckpt_final.bin", model, opt)
    return {
        "steps_run": max(0, settings.steps - start_step),
        "first_loss": first_loss,
        "last_loss": last_loss,
        "final_checkpoint": str(out_dir / "ckpt_final.bin"),
    }


def evaluate_loss(windows: list[TrainingSample], model: TwoLevelDSFN) -> float:
    """Mean training loss over full (unaugmented) windows, no recording."""
    from .tensor import no_grad

    total = 0.0
    with no_grad():
        for sample in windows:
            frames = frames_to_tensors(sample.inputs, model.dtype)
            gt = frames_to_tensors(sample.gt, model.dtype)
            level1, level2 = model.forward(frames, clip=True)
            total += float(dsfn_loss(level1, level2, gt).data)
    return total / len(windows)
