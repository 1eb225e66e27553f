"""PSNR / SSIM fidelity metrics and per-frame report assembly.

PSNR assumes values in [0, 1] and caps at 99 dB when the MSE underflows
1e-10. SSIM is single-scale on Rec.601 luma with an 11x11 Gaussian window
(sigma 1.5, K1 = 0.01, K2 = 0.03, data range 1.0), averaged over valid
window positions only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import bicubic_resize
from .errors import ShapeError

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

_REC601 = np.array([0.299, 0.587, 0.114])


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def _to_luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        return np.tensordot(_REC601, img.astype(np.float64), axes=([0], [0]))
    if img.ndim == 2:
        return img.astype(np.float64)
    raise ShapeError(f"ssim expects (C,H,W) or (H,W) frames, got {img.shape}")


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _window_means(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.tensordot(view, kernel, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    ya = _to_luma(a)
    yb = _to_luma(b)
    if ya.shape[0] < SSIM_WINDOW or ya.shape[1] < SSIM_WINDOW:
        raise ShapeError(
            f"ssim: frame {ya.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    kernel = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_a = _window_means(ya, kernel)
    mu_b = _window_means(yb, kernel)
    var_a = _window_means(ya * ya, kernel) - mu_a * mu_a
    var_b = _window_means(yb * yb, kernel) - mu_b * mu_b
    cov = _window_means(ya * yb, kernel) - mu_a * mu_b
    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def input_scale_deblur_metrics(pred_hr: np.ndarray, gt_sharp_lr: np.ndarray,
                               r: int) -> tuple[float, float]:
    """Metrics of the bicubic-downscaled prediction against the sharp low-res
    ground truth (the deblur-only view of an enhanced output)."""
    down = bicubic_resize(pred_hr, 1.0 / r)
    if down.shape != gt_sharp_lr.shape:
        raise ShapeError(
            f"input-scale eval: downscaled prediction {down.shape} vs gt {gt_sharp_lr.shape}"
        )
    return psnr(down, gt_sharp_lr), ssim(down, gt_sharp_lr)


@dataclass
class FrameMetrics:
    index: int
    kind: str  # "key" | "intermediate"
    psnr: float
    ssim: float


def frame_kind(index: int) -> str:
    return "key" if index % 2 == 0 else "intermediate"


def _aggregate(frames: list[FrameMetrics]) -> dict:
    if not frames:
        return {"psnr": None, "ssim": None}
    return {"psnr": float(np.mean([f.psnr for f in frames])),
            "ssim": float(np.mean([f.ssim for f in frames]))}


def build_report(frames: list[FrameMetrics]) -> dict:
    """The documented report structure: per-frame rows plus key /
    intermediate / combined aggregates (combined = mean over the union)."""
    keys = [f for f in frames if f.kind == "key"]
    inters = [f for f in frames if f.kind == "intermediate"]
    return {
        "frames": [vars(f).copy() for f in frames],
        "aggregates": {
            "key": _aggregate(keys),
            "intermediate": _aggregate(inters),
            "combined": _aggregate(frames),
        },
    }
