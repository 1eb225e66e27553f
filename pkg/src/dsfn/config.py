"""Flat ``key = value`` run configuration with documented defaults.

Unknown keys are rejected by name. The fully resolved configuration is
serialized into every run directory so a run can be reproduced from its
outputs alone.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainSettings

# key -> (default, help)
DEFAULTS = {
    "model.scale": (4, "spatial up-scaling factor r"),
    "model.channels": (3, "image channels"),
    "model.enc_widths": ((64, 128), "widths of the two encoder submodules"),
    "model.jdsr_width": (128, "width of the enhancement submodules"),
    "model.jdsr_depth": (3, "number of enhancement submodules"),
    "model.tfbfi_width": (128, "width of the interpolation submodules"),
    "model.tfbfi_depth": (2, "number of interpolation submodules"),
    "model.dec_width": (64, "decoder submodule width"),
    "model.slope": (0.1, "LeakyReLU negative slope"),
    "train.steps": (500, "total optimization steps"),
    "train.lr": (1e-4, "Adam learning rate"),
    "train.beta1": (0.9, "Adam first-moment decay"),
    "train.beta2": (0.999, "Adam second-moment decay"),
    "train.eps": (1e-8, "Adam epsilon"),
    "train.seed": (0, "seed for sample order and augmentation"),
    "train.checkpoint_every": (500, "periodic checkpoint interval in steps"),
    "data.augment": (True, "enable training-time augmentation"),
    "data.crop": (256, "ground-truth-scale crop edge, 0 to disable"),
    "data.flip_h": (True, "random horizontal flips"),
    "data.flip_v": (True, "random vertical flips"),
    "data.jitter": (0.1, "brightness/contrast/saturation jitter fraction"),
    "data.noise_sigma": (0.1, "stddev of Gaussian noise added to inputs"),
}


def _parse_value(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(part) for part in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc


class RunConfig:
    def __init__(self, values: dict | None = None):
        self.values = {key: default for key, (default, _) in DEFAULTS.items()}
        for key, val in (values or {}).items():
            self.set(key, val)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key: {key}")
        self.values[key] = value

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown configuration key: {key}")
        return self.values[key]

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        cfg = cls()
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key: {key}")
            cfg.values[key] = _parse_value(key, raw, DEFAULTS[key][0])
        return cfg

    def format(self) -> str:
        lines = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, tuple):
                rendered = ",".join(str(v) for v in val)
            elif isinstance(val, bool):
                rendered = "true" if val else "false"
            else:
                rendered = repr(val) if isinstance(val, str) else str(val)
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.format())

    def model_config(self) -> ModelConfig:
        v = self.values
        enc = v["model.enc_widths"]
        if len(enc) != 2:
            raise ConfigError(f"model.enc_widths needs exactly 2 entries, got {enc}")
        return ModelConfig(
            scale=v["model.scale"],
            channels=v["model.channels"],
            enc_widths=tuple(enc),
            jdsr_width=v["model.jdsr_width"],
            jdsr_depth=v["model.jdsr_depth"],
            tfbfi_width=v["model.tfbfi_width"],
            tfbfi_depth=v["model.tfbfi_depth"],
            dec_width=v["model.dec_width"],
            slope=v["model.slope"],
        )

    def train_settings(self) -> TrainSettings:
        v = self.values
        return TrainSettings(
            steps=v["train.steps"],
            lr=v["train.lr"],
            beta1=v["train.beta1"],
            beta2=v["train.beta2"],
            eps=v["train.eps"],
            seed=v["train.seed"],
            checkpoint_every=v["train.checkpoint_every"],
            augment=v["data.augment"],
            crop=v["data.crop"] if v["data.crop"] else None,
            flip_h=v["data.flip_h"],
            flip_v=v["data.flip_v"],
            jitter=v["data.jitter"],
            noise_sigma=v["data.noise_sigma"],
        )
