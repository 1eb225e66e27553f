"""Dense float tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array (float32 by default, float64 available for
tight gradient checks). Differentiable operations append an entry to a
per-thread tape; ``backward(loss)`` replays the tape in reverse execution
order, accumulating gradients additively into every tensor that requires
them. The tape is freed once backward completes.

Layout convention is row-major N,C,H,W throughout.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

_state = threading.local()


def _tape() -> list:
    tape = getattr(_state, "tape", None)
    if tape is None:
        tape = _state.tape = []
    return tape


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class Tensor:
    """A numpy-backed value grid of rank <= 4 with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None and arr.dtype != np.dtype(dtype):
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > 4:
            raise ShapeError(f"tensors are limited to rank 4, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it on the tape when gradients are live."""
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _tape().append((out, backward_fn))
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` for every requires-grad tensor reachable from ``loss``.

    ``loss`` must hold a single value. Gradients accumulate additively when a
    tensor feeds several ops. The tape is cleared afterwards.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    tape = _tape()
    try:
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(tape):
            if out.grad is not None:
                backward_fn(out.grad)
    finally:
        tape.clear()


def _check_finite(*tensors: Tensor) -> None:
    for t in tensors:
        # a float64 running sum turns any Inf/NaN into a non-finite total
        if not np.isfinite(t.data.sum(dtype=np.float64)):
            raise NumericError("non-finite values in operand")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _result(a.data + b.data, (a, b), bwd)


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "subtract")

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(a.data - b.data, (a, b), bwd)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        _accum(x, g * s)

    return _result(x.data * s, (x,), bwd)


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("concat_channels: empty input list")
    first = tensors[0].data
    for t in tensors[1:]:
        if t.data.ndim != first.ndim or t.data.shape[0] != first.shape[0] or t.data.shape[2:] != first.shape[2:]:
            raise ShapeError(
                f"concat_channels: incompatible shapes {first.shape} vs {t.data.shape}"
            )
    sizes = [t.data.shape[1] for t in tensors]

    def bwd(g):
        start = 0
        for t, c in zip(tensors, sizes):
            _accum(t, g[:, start:start + c])
            start += c

    return _result(np.concatenate([t.data for t in tensors], axis=1), tuple(tensors), bwd)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.data.shape[1]):
        raise ShapeError(f"slice_channels: bad range [{start}:{stop}] for {x.data.shape}")

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        _accum(x, gx)

    return _result(x.data[:, start:stop].copy(), (x,), bwd)


def repeat_channels(x: Tensor, times: int) -> Tensor:
    """Repeat each channel ``times`` consecutive times along the channel axis."""
    n, c = x.data.shape[:2]
    spatial = x.data.shape[2:]

    def bwd(g):
        _accum(x, g.reshape(n, c, times, *spatial).sum(axis=2))

    return _result(np.repeat(x.data, times, axis=1), (x,), bwd)


def mean(x: Tensor) -> Tensor:
    size = x.data.size

    def bwd(g):
        _accum(x, np.broadcast_to(g / size, x.data.shape))

    return _result(np.mean(x.data, dtype=x.data.dtype).reshape(()), (x,), bwd)


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar dot product with a constant weight array of the same shape."""
    if weights.shape != x.data.shape:
        raise ShapeError(f"weighted_sum: weights {weights.shape} vs data {x.data.shape}")

    def bwd(g):
        _accum(x, g * weights)

    return _result((x.data * weights).sum(dtype=x.data.dtype).reshape(()), (x,), bwd)


def mean_abs(x: Tensor) -> Tensor:
    size = x.data.size

    def bwd(g):
        _accum(x, (g / size) * np.sign(x.data))

    return _result(np.mean(np.abs(x.data), dtype=x.data.dtype).reshape(()), (x,), bwd)


def clamp(x: Tensor, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    def bwd(g):
        _accum(x, g * ((x.data >= lo) & (x.data <= hi)))

    return _result(np.clip(x.data, lo, hi), (x,), bwd)


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """Elementwise x if x >= 0 else slope * x."""
    if not 0.0 < slope < 1.0:
        raise ShapeError(f"leaky_relu: slope must be in (0,1), got {slope}")
    neg = x.data < 0
    y = x.data.copy()
    y[neg] *= slope

    def bwd(g):
        gx = g.copy()
        gx[neg] *= slope
        _accum(x, gx)

    return _result(y, (x,), bwd)


# ---------------------------------------------------------------------------
# pixel shuffling


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Rearrange (N, r*r*C, H, W) into (N, C, r*H, r*W).

    Channel ordering convention: output pixel (r*y+dy, r*x+dx) of output
    channel c reads input channel c*r*r + dy*r + dx at (y, x).
    """
    n, ch, h, w = x.data.shape
    if ch % (r * r) != 0:
        raise ShapeError(f"pixel_shuffle: {ch} channels not divisible by r^2={r * r}")
    c = ch // (r * r)

    def bwd(g):
        _accum(x, _unshuffle_array(g, r))

    out = x.data.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * r, w * r)
    return _result(np.ascontiguousarray(out), (x,), bwd)


def _unshuffle_array(arr: np.ndarray, r: int) -> np.ndarray:
    n, c, hh, ww = arr.shape
    h, w = hh // r, ww // r
    out = arr.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)
    return np.ascontiguousarray(out)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Exact inverse of :func:`pixel_shuffle`."""
    n, c, hh, ww = x.data.shape
    if hh % r != 0 or ww % r != 0:
        raise ShapeError(f"pixel_unshuffle: spatial dims {hh}x{ww} not divisible by {r}")

    def bwd(g):
        gc = g.reshape(n, c, r, r, hh // r, ww // r).transpose(0, 1, 4, 2, 5, 3)
        _accum(x, np.ascontiguousarray(gc.reshape(n, c, hh, ww)))

    return _result(_unshuffle_array(x.data, r), (x,), bwd)


# ---------------------------------------------------------------------------
# convolution


def _pad2d(arr: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return arr
    n, c, h, w = arr.shape
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), arr.dtype)
    out[:, :, pad:pad + h, pad:pad + w] = arr
    return out


def _im2col(padded: np.ndarray, k: int, h: int, w: int) -> np.ndarray:
    """Stack the k*k shifted views of a padded map: (N, C*k*k, H*W)."""
    n, c = padded.shape[:2]
    col = np.empty((n, c, k, k, h, w), padded.dtype)
    for dy in range(k):
        for dx in range(k):
            col[:, :, dy, dx] = padded[:, :, dy:dy + h, dx:dx + w]
    return col.reshape(n, c * k * k, h * w)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, pad: int = 1) -> Tensor:
    """2-D convolution, stride 1, zero padding chosen to preserve H and W.

    ``weight`` is (Cout, Cin, k, k) with k odd and pad == k // 2, so output
    spatial size always equals input spatial size. Forward uses an
    im2col/matmul fast path; correctness versus the direct tap-sum definition
    is pinned by the test suite.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ShapeError(
            f"conv2d: need 4-d input and weight, got {x.data.shape} and {weight.data.shape}"
        )
    n, cin, h, w = x.data.shape
    cout, cin_w, kh, kw = weight.data.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if cin != cin_w:
        raise ShapeError(f"conv2d: input has {cin} channels, weight expects {cin_w}")
    if pad != kh // 2:
        raise ShapeError(f"conv2d: pad={pad} does not preserve spatial size for k={kh}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape}, expected ({cout},)")
    _check_finite(x, weight, bias)

    k = kh
    wmat = weight.data.reshape(cout, cin * k * k)
    col = _im2col(_pad2d(x.data, pad), k, h, w)
    out = np.matmul(wmat, col)
    out += bias.data[:, None]

    def bwd(g):
        gmat = g.reshape(n, cout, h * w)
        if bias.requires_grad:
            _accum(bias, gmat.sum(axis=(0, 2)))
        if weight.requires_grad:
            gw = np.matmul(gmat, col.transpose(0, 2, 1)).sum(axis=0)
            _accum(weight, gw.reshape(weight.data.shape))
        if x.requires_grad:
            gcol = np.matmul(wmat.T, gmat).reshape(n, cin, k, k, h, w)
            gpad = np.zeros((n, cin, h + 2 * pad, w + 2 * pad), x.data.dtype)
            for dy in range(k):
                for dx in range(k):
                    gpad[:, :, dy:dy + h, dx:dx + w] += gcol[:, :, dy, dx]
            _accum(x, gpad[:, :, pad:pad + h, pad:pad + w] if pad else gpad)

    return _result(out.reshape(n, cout, h, w), (x, weight, bias), bwd)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(fn, x: Tensor, eps: float | None = None,
               max_entries: int | None = None) -> float:
    """Compare reverse-mode gradients of a scalar function against central differences.

    Returns the maximum over checked entries of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    When ``max_entries`` is given and the tensor is larger, only the entries
    with the largest analytic gradient are probed; those dominate the update
    and keep the finite-difference quotient well conditioned.
    """
    if eps is None:
        eps = 1e-3 if x.data.dtype == np.float32 else 1e-5
    was_required = x.requires_grad
    x.requires_grad = True
    x.grad = None
    out = fn(x)
    if out.data.size != 1:
        raise ShapeError("grad_check: fn must be scalar-valued")
    backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
    analytic = np.asarray(analytic, dtype=np.float64)
    x.requires_grad = was_required
    x.grad = None

    size = x.data.size
    if max_entries is not None and size > max_entries:
        idxs = np.argsort(np.abs(analytic.reshape(-1)))[-max_entries:]
    else:
        idxs = np.arange(size)

    flat = x.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(fn(x).data)
            flat[i] = orig - eps
            lo = float(fn(x).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
