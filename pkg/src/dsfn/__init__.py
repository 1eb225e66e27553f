"""Joint video deblurring, super-resolution and frame interpolation.

The package is self-contained: a small reverse-mode autodiff engine
(:mod:`dsfn.tensor`), the network layers and two-level cascade
(:mod:`dsfn.layers`, :mod:`dsfn.model`), data synthesis
(:mod:`dsfn.data`), training and metrics (:mod:`dsfn.train`,
:mod:`dsfn.metrics`) and a CLI (:mod:`dsfn.cli`).
"""

from .data import (AugmentConfig, SharpSequence, TrainingSample, augment,
                   bicubic_resize, degrade_sequence, make_blurry, toy_video_gen)
from .errors import ConfigError, DataError, DsfnError, NumericError, ShapeError
from .layers import (Conv3x3, DeformConv2d, ResidualBlock, SubModule,
                     bilinear_sample, deform_conv2d)
from .metrics import psnr, ssim
from .model import DSFN, ModelConfig, TwoLevelDSFN, make_skip_level1
from .tensor import (Tensor, backward, clamp, concat_channels, conv2d,
                     grad_check, leaky_relu, mean, mean_abs, no_grad,
                     pixel_shuffle, pixel_unshuffle, scale, subtract, add)
from .train import Adam, TrainSettings, dsfn_loss, train

__all__ = [
    "AugmentConfig", "SharpSequence", "TrainingSample", "augment",
    "bicubic_resize", "degrade_sequence", "make_blurry", "toy_video_gen",
    "ConfigError", "DataError", "DsfnError", "NumericError", "ShapeError",
    "Conv3x3", "DeformConv2d", "ResidualBlock", "SubModule",
    "bilinear_sample", "deform_conv2d",
    "psnr", "ssim",
    "DSFN", "ModelConfig", "TwoLevelDSFN", "make_skip_level1",
    "Tensor", "backward", "clamp", "concat_channels", "conv2d", "grad_check",
    "leaky_relu", "mean", "mean_abs", "no_grad", "pixel_shuffle",
    "pixel_unshuffle", "scale", "subtract", "add",
    "Adam", "TrainSettings", "dsfn_loss", "train",
]
