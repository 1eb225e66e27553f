"""Binary checkpoint container.

Layout: magic ``DSFN``, format version (u32 LE), entry count (u32 LE), then
per entry: name length (u32 LE), UTF-8 name, dtype tag (u8, 0 = float32),
rank (u8), dims (u64 LE each), raw little-endian float32 data in row-major
order. Names are hierarchical, e.g. ``level1.encoder.sub0.conv.weight``.

Model hyperparameters ride along as ``meta.*`` entries so a checkpoint alone
is enough to rebuild the network for inference.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .model import ModelConfig

MAGIC = b"DSFN"
FORMAT_VERSION = 1
DTYPE_F32 = 0


def save_checkpoint(path, arrays: dict) -> None:
    """Write a name -> array mapping; arrays are stored as float32."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(np.asarray(arrays[name], dtype=np.float32))
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<BB", DTYPE_F32, arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic bytes, not a checkpoint")
    pos = 4
    version, count = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    arrays = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            dtype_tag, rank = struct.unpack_from("<BB", blob, pos)
            pos += 2
            if dtype_tag != DTYPE_F32:
                raise DataError(f"{path}: unknown dtype tag {dtype_tag} for {name}")
            dims = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
            pos += 8 * rank
            n_values = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=n_values, offset=pos)
            pos += 4 * n_values
            arrays[name] = arr.reshape(dims).copy()
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc
    return arrays


def config_to_meta(cfg: ModelConfig) -> dict:
    return {
        "meta.scale": np.array([cfg.scale], np.float32),
        "meta.channels": np.array([cfg.channels], np.float32),
        "meta.enc_widths": np.array(cfg.enc_widths, np.float32),
        "meta.jdsr_width": np.array([cfg.jdsr_width], np.float32),
        "meta.jdsr_depth": np.array([cfg.jdsr_depth], np.float32),
        "meta.tfbfi_width": np.array([cfg.tfbfi_width], np.float32),
        "meta.tfbfi_depth": np.array([cfg.tfbfi_depth], np.float32),
        "meta.dec_width": np.array([cfg.dec_width], np.float32),
        "meta.slope": np.array([cfg.slope], np.float32),
    }


def meta_to_config(arrays: dict) -> ModelConfig:
    try:
        return ModelConfig(
            scale=int(arrays["meta.scale"][0]),
            channels=int(arrays["meta.channels"][0]),
            enc_widths=tuple(int(v) for v in arrays["meta.enc_widths"]),
            jdsr_width=int(arrays["meta.jdsr_width"][0]),
            jdsr_depth=int(arrays["meta.jdsr_depth"][0]),
            tfbfi_width=int(arrays["meta.tfbfi_width"][0]),
            tfbfi_depth=int(arrays["meta.tfbfi_depth"][0]),
            dec_width=int(arrays["meta.dec_width"][0]),
            # stored as f32; undo the representation error of values like 0.1
            slope=round(float(arrays["meta.slope"][0]), 6),
        )
    except KeyError as exc:
        raise DataError(f"checkpoint lacks model metadata entry {exc}") from exc


def split_prefix(arrays: dict, prefix: str) -> tuple[dict, dict]:
    """Partition entries into (with prefix stripped-of-nothing, the rest)."""
    inside = {k: v for k, v in arrays.items() if k.startswith(prefix)}
    outside = {k: v for k, v in arrays.items() if not k.startswith(prefix)}
    return inside, outside
