"""The joint enhancement network and its two-level cascade.

One network level takes a group of aligned inputs, encodes them into a shared
feature map, enhances the temporally central frame (deblur + super-resolve in
channel space), predicts two offset fields in a single pass and warps the
central enhanced map into the two intermediate positions, then decodes all
three maps against skip connections. Everything runs at input spatial
resolution; only the final periodic shuffle expands H and W by the scale
factor.

Level 1 consumes 3 blurry frames; level 2 consumes the 5 feature maps the two
(parameter-shared) level-1 passes produce for a 4-frame input window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .layers import Conv3x3, DeformConv2d, SubModule, prefixed
from .tensor import (Tensor, add, clamp, concat_channels, pixel_shuffle,
                     repeat_channels, scale, slice_channels)

OFFSET_PROJ_CHANNELS = 36  # two 18-channel fields from one projection


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults give the full-size network."""

    scale: int = 4
    channels: int = 3
    enc_widths: tuple[int, int] = (64, 128)
    jdsr_width: int = 128
    jdsr_depth: int = 3
    tfbfi_width: int = 128
    tfbfi_depth: int = 2
    dec_width: int = 64
    slope: float = 0.1

    def __post_init__(self):
        if self.scale < 1:
            raise ShapeError(f"scale must be >= 1, got {self.scale}")
        widths = (*self.enc_widths, self.jdsr_width, self.tfbfi_width, self.dec_width)
        if any(w <= 0 for w in widths):
            raise ShapeError(f"all widths must be positive, got {widths}")

    @property
    def map_channels(self) -> int:
        """Channels of one high-resolution feature map (scale^2 * C)."""
        return self.scale * self.scale * self.channels


class DSFN:
    """One level of the network; ``n_inputs`` is 3 (frames) or 5 (feature maps)."""

    def __init__(self, cfg: ModelConfig, n_inputs: int, channels_per_input: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.n_inputs = n_inputs
        self.channels_per_input = channels_per_input
        s = cfg.slope
        w0, w1 = cfg.enc_widths
        self.encoder = [SubModule(n_inputs * channels_per_input, w0, rng, s, dtype),
                        SubModule(w0, w1, rng, s, dtype)]
        jw = cfg.jdsr_width
        self.jdsr = [SubModule(w1 if i == 0 else jw, jw, rng, s, dtype)
                     for i in range(cfg.jdsr_depth)]
        tw = cfg.tfbfi_width
        self.tfbfi = [SubModule(w1 if i == 0 else tw, tw, rng, s, dtype)
                      for i in range(cfg.tfbfi_depth)]
        # the projection starts at zero so training begins in the
        # identity-warp regime
        self.offset_proj = Conv3x3(tw, OFFSET_PROJ_CHANNELS, rng, dtype, zero_init=True)
        self.warp = DeformConv2d(jw, jw, rng, dtype)
        self.decoder = SubModule(jw, cfg.dec_width, rng, s, dtype)
        self.decoder_out = Conv3x3(cfg.dec_width, cfg.map_channels, rng, dtype)

    def encode(self, inputs: list[Tensor]) -> Tensor:
        if len(inputs) != self.n_inputs:
            raise ShapeError(f"encoder expects {self.n_inputs} inputs, got {len(inputs)}")
        feat = concat_channels(inputs)
        for sub in self.encoder:
            feat = sub(feat)
        return feat

    def enhance(self, feat: Tensor) -> Tensor:
        """Deblurred, super-resolved feature map for the central input."""
        if feat.data.shape[1] != self.cfg.enc_widths[1]:
            raise ShapeError(
                f"enhance expects {self.cfg.enc_widths[1]} channels, got {feat.data.shape[1]}"
            )
        for sub in self.jdsr:
            feat = sub(feat)
        return feat

    def predict_offsets(self, feat: Tensor) -> tuple[Tensor, Tensor]:
        """Both offset fields from one pass: (toward previous, toward next)."""
        if feat.data.shape[1] != self.cfg.enc_widths[1]:
            raise ShapeError(
                f"predict_offsets expects {self.cfg.enc_widths[1]} channels, "
                f"got {feat.data.shape[1]}"
            )
        for sub in self.tfbfi:
            feat = sub(feat)
        both = self.offset_proj(feat)
        half = OFFSET_PROJ_CHANNELS // 2
        return slice_channels(both, 0, half), slice_channels(both, half, OFFSET_PROJ_CHANNELS)

    def warp_to(self, enhanced: Tensor, offsets: Tensor) -> Tensor:
        return self.warp(enhanced, offsets)

    def decode(self, feat: Tensor, skip: Tensor) -> Tensor:
        out = self.decoder_out(self.decoder(feat))
        if skip.data.shape != out.data.shape:
            raise ShapeError(
                f"skip shape {skip.data.shape} does not match decoder output {out.data.shape}"
            )
        return add(out, skip)

    def forward(self, inputs: list[Tensor], skips: tuple[Tensor, Tensor, Tensor]
                ) -> tuple[Tensor, Tensor, Tensor]:
        """Three high-resolution feature maps: (previous, central, next)."""
        spatial = inputs[0].data.shape[2:]
        feat = self.encode(inputs)
        assert feat.data.shape[2:] == spatial
        central = self.enhance(feat)
        off_prev, off_next = self.predict_offsets(feat)
        prev = self.warp_to(central, off_prev)
        nxt = self.warp_to(central, off_next)
        assert central.data.shape[2:] == spatial
        out = tuple(self.decode(m, s) for m, s in zip((prev, central, nxt), skips))
        assert all(o.data.shape[2:] == spatial for o in out)
        return out

    def named_params(self) -> dict:
        params = {}
        for i, sub in enumerate(self.encoder):
            params.update(prefixed(f"encoder.sub{i}", sub.named_params()))
        for i, sub in enumerate(self.jdsr):
            params.update(prefixed(f"jdsr.sub{i}", sub.named_params()))
        for i, sub in enumerate(self.tfbfi):
            params.update(prefixed(f"tfbfi.sub{i}", sub.named_params()))
        params.update(prefixed("tfbfi.proj", self.offset_proj.named_params()))
        params.update(prefixed("warp", self.warp.named_params()))
        params.update(prefixed("decoder.sub0", self.decoder.named_params()))
        params.update(prefixed("decoder.out", self.decoder_out.named_params()))
        return params


def make_skip_level1(b0: Tensor, b2: Tensor, b4: Tensor, r: int
                     ) -> tuple[Tensor, Tensor, Tensor]:
    """Skip maps for one level-1 pass: neighbor averages and the central frame,
    each repeated r*r times channel-wise so the periodic shuffle reproduces a
    nearest-neighbor upsample."""
    for t in (b2, b4):
        if t.data.shape != b0.data.shape:
            raise ShapeError("skip construction: frames must share a shape")
    left = scale(add(b0, b2), 0.5)
    right = scale(add(b2, b4), 0.5)
    rr = r * r
    return (repeat_channels(left, rr), repeat_channels(b2, rr), repeat_channels(right, rr))


def maps_to_frames(maps, r: int, clip: bool = True) -> list[Tensor]:
    """Periodic shuffle to image resolution, optionally clamped to [0, 1]."""
    frames = [pixel_shuffle(m, r) for m in maps]
    if clip:
        frames = [clamp(f, 0.0, 1.0) for f in frames]
    return frames


class TwoLevelDSFN:
    """Two cascaded levels; the two level-1 passes share one parameter set."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.cfg = cfg
        self.dtype = dtype
        self.level1 = DSFN(cfg, 3, cfg.channels, rng, dtype)
        self.level2 = DSFN(cfg, 5, cfg.map_channels, rng, dtype)

    def forward_maps(self, frames: list[Tensor]) -> dict:
        """Run the cascade on 4 frames; returns feature maps and offset fields.

        ``level1`` holds the 5 high-resolution maps for output indices
        t-3 .. t+1, ``level2`` the 3 refined maps for t-2 .. t.
        """
        if len(frames) != 4:
            raise ShapeError(f"the cascade needs exactly 4 input frames, got {len(frames)}")
        r = self.cfg.scale
        b0, b1, b2, b3 = frames
        skips_a = make_skip_level1(b0, b1, b2, r)
        feat_a = self.level1.encode([b0, b1, b2])
        central_a = self.level1.enhance(feat_a)
        offs_a = self.level1.predict_offsets(feat_a)
        maps_a = tuple(
            self.level1.decode(m, s) for m, s in zip(
                (self.level1.warp_to(central_a, offs_a[0]), central_a,
                 self.level1.warp_to(central_a, offs_a[1])), skips_a))

        skips_b = make_skip_level1(b1, b2, b3, r)
        feat_b = self.level1.encode([b1, b2, b3])
        central_b = self.level1.enhance(feat_b)
        offs_b = self.level1.predict_offsets(feat_b)
        maps_b = tuple(
            self.level1.decode(m, s) for m, s in zip(
                (self.level1.warp_to(central_b, offs_b[0]), central_b,
                 self.level1.warp_to(central_b, offs_b[1])), skips_b))

        # the two passes both produce the map at t-1; average the duplicates
        mid = scale(add(maps_a[2], maps_b[0]), 0.5)
        level1_maps = [maps_a[0], maps_a[1], mid, maps_b[1], maps_b[2]]

        skips2 = (level1_maps[1], level1_maps[2], level1_maps[3])
        feat2 = self.level2.encode(level1_maps)
        central2 = self.level2.enhance(feat2)
        offs2 = self.level2.predict_offsets(feat2)
        level2_maps = [
            self.level2.decode(m, s) for m, s in zip(
                (self.level2.warp_to(central2, offs2[0]), central2,
                 self.level2.warp_to(central2, offs2[1])), skips2)]

        return {
            "level1": level1_maps,
            "level2": level2_maps,
            "offsets": {"level1_a": offs_a, "level1_b": offs_b, "level2": offs2},
        }

    def forward(self, frames: list[Tensor], clip: bool = True
                ) -> tuple[list[Tensor], list[Tensor]]:
        """Enhanced frames: 5 at level 1 (t-3..t+1) and 3 at level 2 (t-2..t)."""
        maps = self.forward_maps(frames)
        r = self.cfg.scale
        return (maps_to_frames(maps["level1"], r, clip),
                maps_to_frames(maps["level2"], r, clip))

    def named_params(self) -> dict:
        return {**prefixed("level1", self.level1.named_params()),
                **prefixed("level2", self.level2.named_params())}

    def param_count(self) -> int:
        return sum(t.data.size for t in self.named_params().values())

    def state_arrays(self) -> dict:
        return {name: t.data for name, t in self.named_params().items()}

    def load_state_arrays(self, arrays: dict) -> None:
        params = self.named_params()
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise ShapeError(f"checkpoint is missing parameters: {missing[:5]} ...")
        for name, t in params.items():
            src = np.asarray(arrays[name], dtype=t.data.dtype)
            if src.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name}: checkpoint shape {src.shape}, model {t.data.shape}"
                )
            t.data = src.copy()
