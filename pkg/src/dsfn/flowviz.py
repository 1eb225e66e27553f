"""Offset-field visualization in the style of optical-flow color maps.

The nine (dy, dx) tap displacements are averaged into one motion vector per
pixel, then rendered with hue encoding direction and saturation encoding
magnitude normalized by the field's 99th-percentile magnitude. A zero field
renders as a neutral (white) image.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .layers import OFFSET_CHANNELS


def mean_offsets(field: np.ndarray) -> np.ndarray:
    """Per-pixel mean (dy, dx) over the 9 kernel taps: (18,H,W) -> (2,H,W)."""
    if field.ndim != 3 or field.shape[0] != OFFSET_CHANNELS:
        raise ShapeError(
            f"offset field must be ({OFFSET_CHANNELS},H,W), got {field.shape}"
        )
    return np.stack([field[0::2].mean(axis=0), field[1::2].mean(axis=0)])


def _hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1 - s)
    q = v * (1 - f * s)
    t = v * (1 - (1 - f) * s)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b]).astype(np.float32)


def motion_to_rgb(motion: np.ndarray) -> np.ndarray:
    """Render a (2,H,W) motion field: hue = direction, saturation = magnitude
    relative to the 99th percentile, full brightness."""
    dy, dx = motion[0], motion[1]
    mag = np.hypot(dy, dx)
    p99 = float(np.percentile(mag, 99))
    sat = np.clip(mag / p99, 0.0, 1.0) if p99 > 1e-12 else np.zeros_like(mag)
    hue = (np.arctan2(dy, dx) / (2 * np.pi)) % 1.0
    return _hsv_to_rgb(hue, sat, np.ones_like(sat))


def visualize_offsets(field: np.ndarray, out_path=None) -> np.ndarray:
    """Color map of an 18-channel offset field; optionally saved as a PNG."""
    rgb = motion_to_rgb(mean_offsets(field))
    if out_path is not None:
        from .data import write_png

        write_png(out_path, rgb)
    return rgb


def magnitude_histogram(fields, bins: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of per-tap displacement magnitudes across one or more fields."""
    mags = []
    for field in fields:
        mags.append(np.hypot(field[0::2], field[1::2]).ravel())
    mags = np.concatenate(mags)
    top = float(mags.max()) if mags.size else 1.0
    counts, edges = np.histogram(mags, bins=bins, range=(0.0, max(top, 1e-6)))
    return edges, counts
