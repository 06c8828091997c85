"""Differentiable layer primitives on dense float64 arrays.

Each primitive supports three evaluations:

* ``forward(layer, x, w)`` -- the activation,
* ``vjp(layer, x, w, cotangent)`` -- gradient of <cotangent, forward> w.r.t. x,
* ``jvp(layer, x, w, tangent)`` -- directional derivative of forward along a tangent.

Weights are always treated as constants; nothing here differentiates with
respect to them.  Convolution is cross-correlation (no kernel flip) with
explicit stride and symmetric zero padding.  All arithmetic is float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import NumericError, ShapeError

CONV2D = "conv2d"
RELU = "relu"
MAXPOOL = "maxpool"
CROSSNORM = "crossnorm"
FULLY_CONNECTED = "fullyconnected"

KINDS = (CONV2D, RELU, MAXPOOL, CROSSNORM, FULLY_CONNECTED)


@dataclass(frozen=True)
class LayerPrimitive:
    """One layer kind plus its hyperparameters.

    Unused fields stay at their defaults for kinds that do not need them.
    """

    kind: str
    out_channels: int = 0          # conv2d
    kernel_size: int = 0           # conv2d (square kernel)
    stride: int = 1                # conv2d
    pad: int = 0                   # conv2d, symmetric zero padding
    pool: int = 0                  # maxpool window (square), stride == window
    width: int = 0                 # fullyconnected output width
    k_n: float = 2.0               # crossnorm additive constant
    alpha_n: float = 1e-4          # crossnorm scale
    beta_n: float = 0.75           # crossnorm exponent
    window: int = 5                # crossnorm channel window size

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}")

    def hyperparams(self):
        """The kind-relevant hyperparameters as a dict (stable key order)."""
        if self.kind == CONV2D:
            return {
                "out_channels": self.out_channels,
                "kernel_size": self.kernel_size,
                "stride": self.stride,
                "pad": self.pad,
            }
        if self.kind == MAXPOOL:
            return {"pool": self.pool}
        if self.kind == FULLY_CONNECTED:
            return {"width": self.width}
        if self.kind == CROSSNORM:
            return {
                "k_n": self.k_n,
                "alpha_n": self.alpha_n,
                "beta_n": self.beta_n,
                "window": self.window,
            }
        return {}


def conv2d(out_channels, kernel_size, stride=1, pad=0):
    return LayerPrimitive(CONV2D, out_channels=out_channels,
                          kernel_size=kernel_size, stride=stride, pad=pad)


def relu():
    return LayerPrimitive(RELU)


def maxpool(pool):
    return LayerPrimitive(MAXPOOL, pool=pool)


def crossnorm(k_n=2.0, alpha_n=1e-4, beta_n=0.75, window=5):
    return LayerPrimitive(CROSSNORM, k_n=k_n, alpha_n=alpha_n,
                          beta_n=beta_n, window=window)


def fully_connected(width):
    return LayerPrimitive(FULLY_CONNECTED, width=width)


def output_shape(layer, in_shape):
    """Deterministic shape inference; raises instead of silently truncating."""
    in_shape = tuple(int(d) for d in in_shape)
    kind = layer.kind
    if kind in (RELU, CROSSNORM):
        if kind == CROSSNORM and len(in_shape) != 3:
            raise ShapeError(f"crossnorm needs a CxHxW input, got {in_shape}")
        return in_shape
    if kind == CONV2D:
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d needs a CxHxW input, got {in_shape}")
        c, h, w = in_shape
        k, s, p = layer.kernel_size, layer.stride, layer.pad
        if h + 2 * p < k or w + 2 * p < k:
            raise ShapeError(f"conv2d kernel {k} too large for input {in_shape} with pad {p}")
        if (h + 2 * p - k) % s or (w + 2 * p - k) % s:
            raise ShapeError(
                f"conv2d stride {s} does not tile input {in_shape} "
                f"(kernel {k}, pad {p})")
        return (layer.out_channels, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)
    if kind == MAXPOOL:
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool needs a CxHxW input, got {in_shape}")
        c, h, w = in_shape
        m = layer.pool
        if h % m or w % m:
            raise ShapeError(f"maxpool window {m} does not tile input {in_shape}")
        return (c, h // m, w // m)
    # fully connected
    return (layer.width,)


def weight_shape(layer, in_shape):
    """Shape of the weight tensor, or None for weightless kinds."""
    if layer.kind == CONV2D:
        c = int(in_shape[0])
        return (layer.out_channels, c, layer.kernel_size, layer.kernel_size)
    if layer.kind == FULLY_CONNECTED:
        return (layer.width, int(np.prod(in_shape)))
    return None


def _check_input(layer, x, w):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{layer.kind}: non-finite input")
    ws = weight_shape(layer, x.shape)
    if ws is None:
        if w is not None:
            raise ShapeError(f"{layer.kind} takes no weights")
    else:
        if w is None:
            raise ShapeError(f"{layer.kind} requires weights of shape {ws}")
        w = np.asarray(w, dtype=np.float64)
        if w.shape != ws:
            raise ShapeError(f"{layer.kind} weights shape {w.shape}, expected {ws}")
    return x, w


@lru_cache(maxsize=256)
def _conv_indices(c, h, w, k, stride, pad):
    """Flat gather indices into the zero-padded input for im2col.

    Returns (idx, hout, wout) where idx has shape (c*k*k, hout*wout) and
    indexes the flattened (c, h+2p, w+2p) padded array.
    """
    hp, wp = h + 2 * pad, w + 2 * pad
    hout = (hp - k) // stride + 1
    wout = (wp - k) // stride + 1
    di = np.repeat(np.arange(k), k)
    dj = np.tile(np.arange(k), k)
    ci = np.repeat(np.arange(c), k * k)
    row = ci * hp * wp + np.tile(di, c) * wp + np.tile(dj, c)
    oi = np.repeat(np.arange(hout), wout) * stride
    oj = np.tile(np.arange(wout), hout) * stride
    col = oi * wp + oj
    idx = row[:, None] + col[None, :]
    return idx, hout, wout


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def _conv_forward(layer, x, w):
    c, h, width = x.shape
    idx, hout, wout = _conv_indices(c, h, width, layer.kernel_size,
                                    layer.stride, layer.pad)
    cols = _pad(x, layer.pad).ravel()[idx]
    w2 = w.reshape(layer.out_channels, -1)
    return (w2 @ cols).reshape(layer.out_channels, hout, wout)


def _conv_vjp(layer, x, w, cot):
    c, h, width = x.shape
    p = layer.pad
    idx, hout, wout = _conv_indices(c, h, width, layer.kernel_size,
                                    layer.stride, p)
    w2 = w.reshape(layer.out_channels, -1)
    dcols = w2.T @ cot.reshape(layer.out_channels, -1)
    hp, wp = h + 2 * p, width + 2 * p
    gpad = np.bincount(idx.ravel(), weights=dcols.ravel(),
                       minlength=c * hp * wp).reshape(c, hp, wp)
    if p:
        gpad = gpad[:, p:-p, p:-p]
    return np.ascontiguousarray(gpad)


def _pool_view(x, m):
    c, h, w = x.shape
    return x.reshape(c, h // m, m, w // m, m).transpose(0, 1, 3, 2, 4).reshape(
        c, h // m, w // m, m * m)


def _pool_argmax(x, m):
    v = _pool_view(x, m)
    return v, np.argmax(v, axis=-1)


def _pool_target_indices(x_shape, m, arg):
    """Flat indices (into the input) of each pool window's argmax."""
    c, h, w = x_shape
    hout, wout = h // m, w // m
    di, dj = np.divmod(arg, m)
    ci = np.arange(c)[:, None, None]
    oi = np.arange(hout)[None, :, None]
    oj = np.arange(wout)[None, None, :]
    return ci * h * w + (oi * m + di) * w + (oj * m + dj)


def _channel_window_sum(a, window):
    """Sum of a over the channel window centered at each channel (clipped)."""
    half = window // 2
    c = a.shape[0]
    out = np.zeros_like(a)
    for off in range(-half, half + 1):
        src_lo = max(0, off)
        src_hi = min(c, c + off)
        out[src_lo - off:src_hi - off] += a[src_lo:src_hi]
    return out


def forward(layer, x, w=None):
    """Activation of one layer.  Pure and deterministic."""
    x, w = _check_input(layer, x, w)
    kind = layer.kind
    if kind == RELU:
        return np.maximum(x, 0.0)
    if kind == CONV2D:
        output_shape(layer, x.shape)
        return _conv_forward(layer, x, w)
    if kind == MAXPOOL:
        output_shape(layer, x.shape)
        v, arg = _pool_argmax(x, layer.pool)
        return np.take_along_axis(v, arg[..., None], axis=-1)[..., 0]
    if kind == CROSSNORM:
        output_shape(layer, x.shape)
        s = layer.k_n + (layer.alpha_n / layer.window) * _channel_window_sum(
            x * x, layer.window)
        return x * np.power(s, -layer.beta_n)
    # fully connected
    return w @ x.ravel()


def vjp(layer, x, w, cotangent):
    """Gradient of <cotangent, forward(layer, x, w)> with respect to x."""
    x, w = _check_input(layer, x, w)
    cot = np.asarray(cotangent, dtype=np.float64)
    out_shape = output_shape(layer, x.shape)
    if cot.shape != out_shape:
        raise ShapeError(f"{layer.kind} cotangent shape {cot.shape}, expected {out_shape}")
    kind = layer.kind
    if kind == RELU:
        return np.where(x > 0, cot, 0.0)
    if kind == CONV2D:
        return _conv_vjp(layer, x, w, cot)
    if kind == MAXPOOL:
        m = layer.pool
        _, arg = _pool_argmax(x, m)
        tgt = _pool_target_indices(x.shape, m, arg)
        g = np.bincount(tgt.ravel(), weights=cot.ravel(), minlength=x.size)
        return g.reshape(x.shape)
    if kind == CROSSNORM:
        s = layer.k_n + (layer.alpha_n / layer.window) * _channel_window_sum(
            x * x, layer.window)
        sb = np.power(s, -layer.beta_n)
        inner = _channel_window_sum(cot * x * np.power(s, -layer.beta_n - 1.0),
                                    layer.window)
        return cot * sb - (2.0 * layer.alpha_n / layer.window) * layer.beta_n * x * inner
    # fully connected
    return (w.T @ cot).reshape(x.shape)


def jvp(layer, x, w, tangent):
    """Directional derivative of forward at x along tangent.

    ReLU and maxpool use the branch active at x (forward pass selection),
    including at exact ties.
    """
    x, w = _check_input(layer, x, w)
    tan = np.asarray(tangent, dtype=np.float64)
    if tan.shape != x.shape:
        raise ShapeError(f"{layer.kind} tangent shape {tan.shape}, expected {x.shape}")
    kind = layer.kind
    if kind == RELU:
        return np.where(x > 0, tan, 0.0)
    if kind == CONV2D:
        return _conv_forward(layer, tan, w)
    if kind == MAXPOOL:
        m = layer.pool
        _, arg = _pool_argmax(x, m)
        vt = _pool_view(tan, m)
        return np.take_along_axis(vt, arg[..., None], axis=-1)[..., 0]
    if kind == CROSSNORM:
        s = layer.k_n + (layer.alpha_n / layer.window) * _channel_window_sum(
            x * x, layer.window)
        t = _channel_window_sum(x * tan, layer.window)
        return (tan * np.power(s, -layer.beta_n)
                - (2.0 * layer.alpha_n / layer.window) * layer.beta_n
                * x * np.power(s, -layer.beta_n - 1.0) * t)
    # fully connected
    return w @ tan.ravel()


def finite_difference_gradient(f, x, step=1e-5):
    """Central-difference gradient of a scalar function, one pair per coordinate."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return g
