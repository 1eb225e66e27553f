"""Whole-sequence inference by sliding the 4-frame window over the input.

Input frames sit at even output indices (frame k -> index 2k). Windows
advance by two input frames, plus one extra tail window when the count is
odd, so the level-1 output ranges of consecutive windows touch at exactly one
index; indices produced by more than one window are averaged. The emitted
sequence covers output indices 1 .. 2n-3 (2n-3 frames for n inputs), taking
the refined level-2 frame where one exists and the level-1 frame at the
indices only level 1 covers.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .model import TwoLevelDSFN, maps_to_frames
from .tensor import Tensor, no_grad


def sliding_window_starts(n_frames: int) -> list[int]:
    if n_frames < 4:
        raise DataError(f"need at least 4 input frames, got {n_frames}")
    starts = list(range(0, n_frames - 3, 2))
    if starts[-1] != n_frames - 4:
        starts.append(n_frames - 4)
    return starts


def _blend(acc: dict) -> dict:
    return {idx: np.mean(stack, axis=0) if len(stack) > 1 else stack[0]
            for idx, stack in acc.items()}


def enhance_sequence(model: TwoLevelDSFN, blurry: np.ndarray,
                     collect_offsets: bool = False) -> dict:
    """Run the cascade over every window of an (n, 3, h, w) blurry stack.

    Returns ``outputs`` (index -> enhanced frame, level-2 preferred),
    ``level1`` (index -> level-1 frame) and, when requested, ``offsets``
    (window start -> the first level-1 pass's two 18-channel fields).
    """
    starts = sliding_window_starts(len(blurry))
    level1_acc: dict[int, list] = {}
    level2_acc: dict[int, list] = {}
    offsets: dict[int, tuple] = {}
    dtype = model.dtype
    with no_grad():
        for k in starts:
            frames = [Tensor(blurry[k + i:k + i + 1].astype(dtype, copy=True))
                      for i in range(4)]
            maps = model.forward_maps(frames)
            l1 = maps_to_frames(maps["level1"], model.cfg.scale)
            l2 = maps_to_frames(maps["level2"], model.cfg.scale)
            for j, frame in enumerate(l1):
                level1_acc.setdefault(2 * k + 1 + j, []).append(frame.data[0])
            for j, frame in enumerate(l2):
                level2_acc.setdefault(2 * k + 2 + j, []).append(frame.data[0])
            if collect_offsets:
                prev, nxt = maps["offsets"]["level1_a"]
                offsets[k] = (prev.data[0].copy(), nxt.data[0].copy())

    level1 = _blend(level1_acc)
    level2 = _blend(level2_acc)
    outputs = {idx: level2.get(idx, level1[idx]) for idx in sorted(level1)}
    return {"outputs": outputs, "level1": level1, "offsets": offsets}
