"""Network building blocks: 3x3 conv layers, residual blocks, stacked
submodules and deformable convolution with learned per-pixel offsets.

Offset fields carry 18 channels for a 3x3 kernel: tap-major, (dy, dx)
interleaved, so channels 2k and 2k+1 hold the vertical and horizontal
displacement of tap k, taps enumerated row-major over the 3x3 grid.
Displacements are absolute pixel offsets added to the standard tap
positions; sampling is bilinear with zero outside the input.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, _accum, _result, add, conv2d, leaky_relu

KERNEL_TAPS = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
OFFSET_CHANNELS = 2 * len(KERNEL_TAPS)  # 18


def uniform_conv_init(rng: np.random.Generator, cout: int, cin: int, k: int,
                      dtype=np.float32) -> np.ndarray:
    # scaled so a layer preserves activation variance (uniform on +-sqrt(3/fan));
    # the plain 1/sqrt(fan) bound shrinks signals 0.58x per layer, which starves
    # the deep trunk at desk-scale step budgets
    bound = np.sqrt(3.0 / (cin * k * k))
    return rng.uniform(-bound, bound, size=(cout, cin, k, k)).astype(dtype)


def prefixed(prefix: str, params: dict) -> dict:
    return {f"{prefix}.{name}": t for name, t in params.items()}


class Conv3x3:
    """One 3x3, stride-1, zero-padded convolution layer with bias."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator,
                 dtype=np.float32, zero_init: bool = False):
        if zero_init:
            w = np.zeros((cout, cin, 3, 3), dtype)
        else:
            w = uniform_conv_init(rng, cout, cin, 3, dtype)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, pad=1)

    def named_params(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}


class ResidualBlock:
    """conv -> LeakyReLU -> conv, plus the identity; no trailing activation."""

    def __init__(self, width: int, rng: np.random.Generator, slope: float = 0.1,
                 dtype=np.float32):
        self.width = width
        self.slope = slope
        self.conv0 = Conv3x3(width, width, rng, dtype)
        self.conv1 = Conv3x3(width, width, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[1] != self.width:
            raise ShapeError(
                f"residual block of width {self.width} got {x.data.shape[1]} channels"
            )
        return add(x, self.conv1(leaky_relu(self.conv0(x), self.slope)))

    def named_params(self) -> dict:
        return {**prefixed("conv0", self.conv0.named_params()),
                **prefixed("conv1", self.conv1.named_params())}


class SubModule:
    """One convolution followed by two residual blocks, all of width ``m``."""

    def __init__(self, cin: int, m: int, rng: np.random.Generator,
                 slope: float = 0.1, dtype=np.float32):
        self.slope = slope
        self.conv = Conv3x3(cin, m, rng, dtype)
        self.block0 = ResidualBlock(m, rng, slope, dtype)
        self.block1 = ResidualBlock(m, rng, slope, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        y = leaky_relu(self.conv(x), self.slope)
        return self.block1(self.block0(y))

    def named_params(self) -> dict:
        return {**prefixed("conv", self.conv.named_params()),
                **prefixed("block0", self.block0.named_params()),
                **prefixed("block1", self.block1.named_params())}


# ---------------------------------------------------------------------------
# deformable convolution


def bilinear_sample(x: Tensor, py: float, px: float, n: int, c: int) -> float:
    """Sample one channel at a fractional position, zero outside the grid."""
    data = x.data
    h, w = data.shape[2], data.shape[3]
    y0 = int(np.floor(py))
    x0 = int(np.floor(px))
    fy = py - y0
    fx = px - x0
    total = 0.0
    for yy, wy in ((y0, 1.0 - fy), (y0 + 1, fy)):
        if not 0 <= yy < h:
            continue
        for xx, wx in ((x0, 1.0 - fx), (x0 + 1, fx)):
            if not 0 <= xx < w:
                continue
            total += wy * wx * float(data[n, c, yy, xx])
    return total


_TAP_DY = np.array([dy for dy, _ in KERNEL_TAPS], np.int64)
_TAP_DX = np.array([dx for _, dx in KERNEL_TAPS], np.int64)


def _deform_geometry(x_data: np.ndarray, off_data: np.ndarray):
    """Sampling geometry and gathered corner values for every tap at once.

    Returns corner weights ``cw`` (4, 9, N, P), masked corner values ``vals``
    (4, 9, N, Cin, P), bilinear fractions, and the per-tap samples
    (9, N, Cin, P). Corner order is (y0,x0), (y0,x1), (y1,x0), (y1,x1).
    """
    n, cin, h, w = x_data.shape
    p = h * w
    dtype = x_data.dtype
    off = off_data.reshape(n, OFFSET_CHANNELS, p)
    grid_y = (np.arange(h, dtype=dtype)[:, None] + np.zeros((1, w), dtype)).reshape(p)
    grid_x = (np.arange(w, dtype=dtype)[None, :] + np.zeros((h, 1), dtype)).reshape(p)

    py = grid_y + _TAP_DY[:, None, None] + off[:, 0::2].transpose(1, 0, 2)  # (9, N, P)
    px = grid_x + _TAP_DX[:, None, None] + off[:, 1::2].transpose(1, 0, 2)
    y0 = np.floor(py).astype(np.int64)
    x0 = np.floor(px).astype(np.int64)
    fy = (py - y0).astype(dtype)
    fx = (px - x0).astype(dtype)

    ny = np.stack([y0, y0, y0 + 1, y0 + 1])            # (4, 9, N, P)
    nx = np.stack([x0, x0 + 1, x0, x0 + 1])
    valid = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
    idx = np.clip(ny, 0, h - 1) * w + np.clip(nx, 0, w - 1)
    cw = np.stack([(1 - fy) * (1 - fx), (1 - fy) * fx,
                   fy * (1 - fx), fy * fx])

    flat = x_data.reshape(n, cin, p)
    vals = np.empty((4, 9, n, cin, p), dtype)
    for ni in range(n):
        gathered = flat[ni][:, idx[:, :, ni].reshape(-1)]  # (Cin, 36*P)
        vals[:, :, ni] = gathered.reshape(cin, 4, 9, p).transpose(1, 2, 0, 3)
    vals *= valid[:, :, :, None, :]
    samp = (vals * cw[:, :, :, None, :]).sum(axis=0)       # (9, N, Cin, P)
    return idx, valid, cw, fy, fx, vals, samp


def deform_conv2d(x: Tensor, offsets: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """3x3 convolution whose taps are displaced per pixel by ``offsets``.

    One offset group is shared across all input channels. Differentiable with
    respect to the input, the offsets, the weight and the bias.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"deform_conv2d: need 4-d input, got {x.data.shape}")
    n, cin, h, w = x.data.shape
    if offsets.data.shape[1] != OFFSET_CHANNELS:
        raise ShapeError(
            f"deform_conv2d: offsets must have {OFFSET_CHANNELS} channels, "
            f"got {offsets.data.shape[1]}"
        )
    if offsets.data.shape[0] != n or offsets.data.shape[2:] != (h, w):
        raise ShapeError(
            f"deform_conv2d: offsets shape {offsets.data.shape} does not match input {x.data.shape}"
        )
    cout, cin_w, kh, kw = weight.data.shape
    if (kh, kw) != (3, 3) or cin_w != cin:
        raise ShapeError(
            f"deform_conv2d: weight {weight.data.shape} incompatible with {cin}-channel input"
        )
    if bias.data.shape != (cout,):
        raise ShapeError(f"deform_conv2d: bias shape {bias.data.shape}, expected ({cout},)")

    dtype = x.data.dtype
    p = h * w
    idx, valid, cw, fy, fx, vals, samp = _deform_geometry(x.data, offsets.data)

    out = np.zeros((n, cout, p), dtype)
    wtaps = weight.data.transpose(2, 3, 0, 1).reshape(9, cout, cin)
    for k in range(9):
        out += np.matmul(wtaps[k], samp[k])
    out += bias.data[:, None]

    def bwd(g):
        gmat = g.reshape(n, cout, p)
        if bias.requires_grad:
            _accum(bias, gmat.sum(axis=(0, 2)))
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for k, (dy, dx) in enumerate(KERNEL_TAPS):
                gw[:, :, dy + 1, dx + 1] = np.matmul(
                    gmat, samp[k].transpose(0, 2, 1)).sum(axis=0)
            _accum(weight, gw)
        if not (x.requires_grad or offsets.requires_grad):
            return
        gsamp = np.empty((9, n, cin, p), dtype)
        for k in range(9):
            gsamp[k] = np.matmul(wtaps[k].T, gmat)
        if offsets.requires_grad:
            fx1 = fx[:, :, None, :]
            fy1 = fy[:, :, None, :]
            dvdy = (1 - fx1) * (vals[2] - vals[0]) + fx1 * (vals[3] - vals[1])
            dvdx = (1 - fy1) * (vals[1] - vals[0]) + fy1 * (vals[3] - vals[2])
            goff = np.empty((n, OFFSET_CHANNELS, p), dtype)
            goff[:, 0::2] = (gsamp * dvdy).sum(axis=2).transpose(1, 0, 2)
            goff[:, 1::2] = (gsamp * dvdx).sum(axis=2).transpose(1, 0, 2)
            _accum(offsets, goff.reshape(offsets.data.shape))
        if x.requires_grad:
            gx = np.zeros(n * cin * p, dtype)
            contrib = gsamp[None] * (cw * valid)[:, :, :, None, :]  # (4,9,N,Cin,P)
            chan = (np.arange(cin, dtype=np.int64) * p)[None, None, None, :, None]
            batch = (np.arange(n, dtype=np.int64) * cin * p)[None, None, :, None, None]
            full_idx = idx[:, :, :, None, :] + chan + batch
            np.add.at(gx, full_idx.ravel(), contrib.ravel())
            _accum(x, gx.reshape(n, cin, h, w))

    return _result(out.reshape(n, cout, h, w), (x, offsets, weight, bias), bwd)


class DeformConv2d:
    """Deformable 3x3 convolution layer; offsets are supplied per call."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, dtype=np.float32):
        self.weight = Tensor(uniform_conv_init(rng, cout, cin, 3, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(cout, dtype), requires_grad=True)

    def __call__(self, x: Tensor, offsets: Tensor) -> Tensor:
        return deform_conv2d(x, offsets, self.weight, self.bias)

    def named_params(self) -> dict:
        return {"weight": self.weight, "bias": self.bias}
