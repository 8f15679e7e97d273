"""Dense NCHW tensor primitives with hand-written backward passes.

Tensors are plain C-contiguous numpy arrays (float32 for training, float64
for verification). All functions here are pure: they never mutate their
inputs, and every reduction has a fixed accumulation order, so results are
reproducible and the module is safe to call from multiple threads on shared
read-only arrays.

Index conventions that the rest of the package relies on:

* ``pixel_shuffle``: out(n, c, h*s+dh, w*s+dw) = in(n, c*s*s + dh*s + dw, h, w)
* ``unfold``: out(n, c*k*k + a*k + b, i, j) = x(n, c, i+a-k//2, j+b-k//2),
  zero outside bounds
* ``nearest_upsample``: out(n, c, i, j) = in(n, c, i//s, j//s)
* ``bilinear/bicubic``: source coordinate (i'+0.5)/s - 0.5, clamped to the
  input range (the usual align-corners=false rule)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the requested operation."""


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ShapeError(msg)


def check_finite(x: np.ndarray, name: str = "input") -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a (transpose-)convolution layer.

    Output extents are floor((in + 2*padding - kernel) / stride) + 1 for
    conv2d and (in - 1)*stride - 2*padding + kernel for transpose_conv2d.
    Padding is symmetric zero padding.
    """

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    has_bias: bool = True

    def __post_init__(self) -> None:
        _require(self.stride >= 1, "stride must be >= 1")
        _require(self.padding >= 0, "padding must be >= 0")
        _require(self.kernel_h >= 1 and self.kernel_w >= 1, "kernel extents must be >= 1")

    def conv_out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        _require(oh >= 1 and ow >= 1, f"conv output extents must be >= 1, got {oh}x{ow}")
        return oh, ow

    def tconv_out_hw(self, h: int, w: int) -> tuple[int, int]:
        oh = (h - 1) * self.stride - 2 * self.padding + self.kernel_h
        ow = (w - 1) * self.stride - 2 * self.padding + self.kernel_w
        _require(oh >= 1 and ow >= 1, f"transpose conv output extents must be >= 1, got {oh}x{ow}")
        return oh, ow


# ---------------------------------------------------------------------------
# im2col / col2im


def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=x.dtype)
    xp[:, :, p : p + h, p : p + w] = x
    return xp


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    """Gather sliding windows into (N, C*kh*kw, OH*OW) columns.

    Column channel index is c*kh*kw + a*kw + b for window offset (a, b).
    """
    n, c, h, w = x.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    xp = _pad2d(x, padding)
    sn, sc, sh, sw = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
    )
    return windows.reshape(n, c * kh * kw, oh * ow)


def _col2im(
    dcols: np.ndarray,
    x_shape: tuple[int, int, int, int],
    kh: int,
    kw: int,
    stride: int,
    padding: int,
) -> np.ndarray:
    """Adjoint of _im2col: scatter-add columns back onto the input grid."""
    n, c, h, w = x_shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=dcols.dtype)
    d6 = dcols.reshape(n, c, kh, kw, oh, ow)
    for a in range(kh):
        for b in range(kw):
            dxp[:, :, a : a + (oh - 1) * stride + 1 : stride,
                b : b + (ow - 1) * stride + 1 : stride] += d6[:, :, a, b]
    return dxp[:, :, padding : padding + h, padding : padding + w]


# ---------------------------------------------------------------------------
# Convolution


def _check_conv_inputs(x, w, b, spec, w_shape, what):
    _require(x.ndim == 4, f"{what} expects a rank-4 NCHW input, got rank {x.ndim}")
    _require(w.shape == w_shape, f"{what} weight shape {w.shape} != expected {w_shape}")
    if spec.has_bias:
        _require(b is not None and b.shape == (spec.out_channels,),
                 f"{what} bias shape must be ({spec.out_channels},)")
    else:
        _require(b is None, f"{what}: bias given but spec.has_bias is False")
    check_finite(x, f"{what} input")
    check_finite(w, f"{what} weight")
    if b is not None:
        check_finite(b, f"{what} bias")


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, spec: ConvSpec) -> np.ndarray:
    """Cross-correlate x (N,Cin,H,W) with w (Cout,Cin,kh,kw), zero padded."""
    w_shape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
    _check_conv_inputs(x, w, b, spec, w_shape, "conv2d")
    n, cin, h, wd = x.shape
    _require(cin == spec.in_channels, f"conv2d input channels {cin} != spec {spec.in_channels}")
    oh, ow = spec.conv_out_hw(h, wd)
    cols = _im2col(x, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding)
    y = np.matmul(w.reshape(spec.out_channels, -1), cols)
    y = y.reshape(n, spec.out_channels, oh, ow)
    if b is not None:
        y += b.reshape(1, -1, 1, 1)
    return y


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, spec: ConvSpec, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Gradients of conv2d w.r.t. (x, w, b) given upstream dy."""
    n = x.shape[0]
    cout = spec.out_channels
    dy2 = dy.reshape(n, cout, -1)
    cols = _im2col(x, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding)
    dw = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3)) if spec.has_bias else None
    dcols = np.matmul(w.reshape(cout, -1).T, dy2)
    dx = _col2im(dcols, x.shape, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding)
    return dx, dw, db


def transpose_conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, spec: ConvSpec) -> np.ndarray:
    """Scatter-accumulate transpose convolution; w is (Cin,Cout,kh,kw).

    Output extents are (in-1)*stride - 2*padding + kernel, i.e. the shape
    whose conv2d under the same spec would produce the input extents.
    """
    _require(spec.stride in (1, 2), "transpose_conv2d supports stride 1 or 2")
    w_shape = (spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w)
    _check_conv_inputs(x, w, b, spec, w_shape, "transpose_conv2d")
    n, cin, h, wd = x.shape
    _require(cin == spec.in_channels, f"transpose_conv2d input channels {cin} != spec {spec.in_channels}")
    oh, ow = spec.tconv_out_hw(h, wd)
    cout, kh, kw, s, p = spec.out_channels, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding
    # cols[n, cout*kh*kw + a*kw + b, i*W+j] = sum_cin x[n,cin,i,j] * w[cin,cout,a,b]
    cols = np.matmul(w.reshape(cin, -1).T, x.reshape(n, cin, h * wd))
    full = np.zeros((n, cout, (h - 1) * s + kh, (wd - 1) * s + kw), dtype=x.dtype)
    d6 = cols.reshape(n, cout, kh, kw, h, wd)
    for a in range(kh):
        for bb in range(kw):
            full[:, :, a : a + (h - 1) * s + 1 : s, bb : bb + (wd - 1) * s + 1 : s] += d6[:, :, a, bb]
    y = full[:, :, p : p + oh, p : p + ow]
    if b is not None:
        y = y + b.reshape(1, -1, 1, 1)
    return y


def transpose_conv2d_backward(
    x: np.ndarray, w: np.ndarray, spec: ConvSpec, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Gradients of transpose_conv2d w.r.t. (x, w, b)."""
    n, cin, h, wd = x.shape
    cout, kh, kw, s, p = spec.out_channels, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding
    # dx is a strided conv of dy with the same kernel, roles of in/out swapped.
    dycols = _im2col(dy, kh, kw, s, p)  # (n, cout*kh*kw, h*wd)
    dx = np.matmul(w.reshape(cin, -1), dycols).reshape(x.shape)
    dw = np.matmul(x.reshape(n, cin, -1), dycols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3)) if spec.has_bias else None
    return dx, dw, db


# ---------------------------------------------------------------------------
# Normalization and activations


def instance_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Per-(sample, channel) normalization with population variance."""
    _require(x.ndim == 4, "instance_norm expects NCHW")
    _require(gamma.shape == (x.shape[1],) and beta.shape == (x.shape[1],),
             "gamma/beta must have shape (C,)")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    mean = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    xhat = (x - mean) / np.sqrt(var + eps)
    return xhat * gamma.reshape(1, -1, 1, 1) + beta.reshape(1, -1, 1, 1)


def instance_norm_backward(
    x: np.ndarray, gamma: np.ndarray, eps: float, dy: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of instance_norm w.r.t. (x, gamma, beta)."""
    mean = x.mean(axis=(2, 3), keepdims=True)
    var = x.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    g = dy * gamma.reshape(1, -1, 1, 1)
    m1 = g.mean(axis=(2, 3), keepdims=True)
    m2 = (g * xhat).mean(axis=(2, 3), keepdims=True)
    dx = inv * (g - m1 - xhat * m2)
    return dx, dgamma, dbeta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x > 0, x, x * np.asarray(slope, dtype=x.dtype))


def leaky_relu_backward(x: np.ndarray, slope: float, dy: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dy, dy * np.asarray(slope, dtype=dy.dtype))


def elementwise(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise add/sub/mul. Shapes must match exactly unless one side is scalar."""
    a = np.asarray(a)
    b = np.asarray(b)
    _require(a.shape == b.shape or a.ndim == 0 or b.ndim == 0,
             f"elementwise shapes {a.shape} and {b.shape} do not match")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError(f"unknown elementwise op {op!r}")


def channel_softmax(x: np.ndarray) -> np.ndarray:
    """Softmax over the channel axis, per pixel, with max subtraction."""
    _require(x.ndim == 4, "channel_softmax expects NCHW")
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def channel_softmax_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Backward of channel_softmax given its forward output y."""
    dot = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - dot)


# ---------------------------------------------------------------------------
# Rearrangement and upsampling


def pixel_shuffle(x: np.ndarray, s: int) -> np.ndarray:
    """Move channel depth into space: (N, C*s*s, H, W) -> (N, C, H*s, W*s)."""
    _require(x.ndim == 4, "pixel_shuffle expects NCHW")
    n, cs2, h, w = x.shape
    _require(s >= 1, "scale must be >= 1")
    _require(cs2 % (s * s) == 0, f"channel count {cs2} not divisible by s^2={s*s}")
    c = cs2 // (s * s)
    return (
        x.reshape(n, c, s, s, h, w)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, c, h * s, w * s)
    )


def pixel_shuffle_backward(dy: np.ndarray, s: int) -> np.ndarray:
    n, c, hs, ws = dy.shape
    h, w = hs // s, ws // s
    return (
        dy.reshape(n, c, h, s, w, s)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * s * s, h, w)
    )


def nearest_upsample(x: np.ndarray, s: int) -> np.ndarray:
    """Integer-factor nearest-neighbor expansion: out(i,j) = in(i//s, j//s)."""
    _require(x.ndim == 4, "nearest_upsample expects NCHW")
    _require(s >= 1, "scale must be >= 1")
    if s == 1:
        return x.copy()
    return np.repeat(np.repeat(x, s, axis=2), s, axis=3)


def nearest_upsample_backward(dy: np.ndarray, s: int) -> np.ndarray:
    if s == 1:
        return dy.copy()
    n, c, hs, ws = dy.shape
    return dy.reshape(n, c, hs // s, s, ws // s, s).sum(axis=(3, 5))


def unfold(x: np.ndarray, k: int) -> np.ndarray:
    """Stack each pixel's zero-padded k x k neighborhood into the channel axis."""
    _require(x.ndim == 4, "unfold expects NCHW")
    if k % 2 != 1:
        raise ValueError(f"unfold kernel size must be odd, got {k}")
    n, c, h, w = x.shape
    cols = _im2col(x, k, k, stride=1, padding=k // 2)
    return cols.reshape(n, c * k * k, h, w)


def unfold_backward(dy: np.ndarray, x_shape: tuple[int, int, int, int], k: int) -> np.ndarray:
    n, c, h, w = x_shape
    return _col2im(dy.reshape(n, c * k * k, h * w), x_shape, k, k, stride=1, padding=k // 2)


# ---------------------------------------------------------------------------
# Interpolated resizing (matrix form so forward and backward share weights)


def _cubic_weight(t: np.ndarray) -> np.ndarray:
    # Keys kernel with a = -0.5; exact partition of unity, identity at t = 0.
    a = -0.5
    t = np.abs(t)
    w = np.zeros_like(t)
    m1 = t <= 1
    m2 = (t > 1) & (t < 2)
    w[m1] = (a + 2) * t[m1] ** 3 - (a + 3) * t[m1] ** 2 + 1
    w[m2] = a * t[m2] ** 3 - 5 * a * t[m2] ** 2 + 8 * a * t[m2] - 4 * a
    return w


def _interp_matrix(out_size: int, in_size: int, scale: float, mode: str, dtype) -> np.ndarray:
    """Row-stochastic (out_size, in_size) matrix realizing 1-D interpolation."""
    a = np.zeros((out_size, in_size), dtype=np.float64)
    src = (np.arange(out_size) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, in_size - 1.0)
    if mode == "linear":
        i0 = np.floor(src).astype(np.int64)
        frac = src - i0
        i1 = np.minimum(i0 + 1, in_size - 1)
        for j in range(out_size):
            a[j, i0[j]] += 1.0 - frac[j]
            a[j, i1[j]] += frac[j]
    elif mode == "cubic":
        i0 = np.floor(src).astype(np.int64)
        frac = src - i0
        for tap in range(-1, 3):
            wgt = _cubic_weight(frac - tap)
            idx = np.clip(i0 + tap, 0, in_size - 1)
            for j in range(out_size):
                a[j, idx[j]] += wgt[j]
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    return a.astype(dtype)


def _apply_separable(x: np.ndarray, ah: np.ndarray, aw: np.ndarray) -> np.ndarray:
    return np.matmul(np.matmul(ah, x), aw.T)


def bilinear_upsample(x: np.ndarray, s: int) -> np.ndarray:
    """Separable linear interpolation by integer factor s."""
    _require(x.ndim == 4 and s >= 1, "bilinear_upsample expects NCHW and s >= 1")
    n, c, h, w = x.shape
    ah = _interp_matrix(h * s, h, s, "linear", x.dtype)
    aw = _interp_matrix(w * s, w, s, "linear", x.dtype)
    return _apply_separable(x, ah, aw)


def bilinear_upsample_backward(dy: np.ndarray, x_shape, s: int) -> np.ndarray:
    n, c, h, w = x_shape
    ah = _interp_matrix(h * s, h, s, "linear", dy.dtype)
    aw = _interp_matrix(w * s, w, s, "linear", dy.dtype)
    return _apply_separable(dy, ah.T, aw.T)


def bicubic_upsample(x: np.ndarray, s: int) -> np.ndarray:
    """Separable cubic interpolation by integer factor s (border replicated)."""
    _require(x.ndim == 4 and s >= 1, "bicubic_upsample expects NCHW and s >= 1")
    n, c, h, w = x.shape
    ah = _interp_matrix(h * s, h, s, "cubic", x.dtype)
    aw = _interp_matrix(w * s, w, s, "cubic", x.dtype)
    return _apply_separable(x, ah, aw)


def bicubic_upsample_backward(dy: np.ndarray, x_shape, s: int) -> np.ndarray:
    n, c, h, w = x_shape
    ah = _interp_matrix(h * s, h, s, "cubic", dy.dtype)
    aw = _interp_matrix(w * s, w, s, "cubic", dy.dtype)
    return _apply_separable(dy, ah.T, aw.T)


def _nearest_matrix(out_size: int, in_size: int, dtype) -> np.ndarray:
    a = np.zeros((out_size, in_size), dtype=dtype)
    idx = (np.arange(out_size) * in_size) // out_size
    a[np.arange(out_size), idx] = 1
    return a


def nearest_resize(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize to arbitrary extents by nearest sampling: out(j) = in(j*in//out)."""
    _require(x.ndim == 4, "nearest_resize expects NCHW")
    _require(out_h >= 1 and out_w >= 1, "output extents must be >= 1")
    n, c, h, w = x.shape
    if (out_h, out_w) == (h, w):
        return x.copy()
    ah = _nearest_matrix(out_h, h, x.dtype)
    aw = _nearest_matrix(out_w, w, x.dtype)
    return _apply_separable(x, ah, aw)


def nearest_resize_backward(dy: np.ndarray, x_shape) -> np.ndarray:
    n, c, h, w = x_shape
    if dy.shape[2:] == (h, w):
        return dy.copy()
    ah = _nearest_matrix(dy.shape[2], h, dy.dtype)
    aw = _nearest_matrix(dy.shape[3], w, dy.dtype)
    return _apply_separable(dy, ah.T, aw.T)
