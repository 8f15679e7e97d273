"""Semantic-aware upsampling (SAU).

Two branches: SAKG predicts a per-output-pixel kernel field from the input
feature (1x1 channel compression, a spatial kernel-generation convolution,
pixel shuffle to output resolution, channel softmax), and SAFU applies that
field to the nearest-expanded input as a weighted sum over each pixel's
zero-padded k x k neighborhood:

    out(n,c,i,j) = sum_{p,q} f_e(n,c,i+p,j+q) * f_n(n,(p+r)*k+(q+r),i,j)

with r = k//2 and f_e(n,c,i,j) = f(n,c,i//s,j//s). ``sau_naive`` computes
the identical result with direct nested loops and no unfold/shuffle
buffers; it is the ground-truth oracle and the benchmark baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import ops
from .ops import ConvSpec, _require


@dataclass(frozen=True)
class SauConfig:
    """Operator hyperparameters: C input channels, C' compressed channels,
    kernel size k (odd), upsample scale s."""

    channels: int
    compressed: int = 64
    k: int = 5
    s: int = 2
    kernelgen_size: int = 3  # spatial extent of the kernel-generation conv

    def __post_init__(self) -> None:
        if self.k % 2 != 1:
            raise ValueError(f"kernel size k must be odd, got {self.k}")
        if self.kernelgen_size % 2 != 1:
            raise ValueError("kernelgen_size must be odd")
        if self.s < 1:
            raise ValueError("upsample scale s must be >= 1")
        if not (1 <= self.compressed <= self.channels):
            raise ValueError(f"compressed channels must be in [1, {self.channels}]")

    @property
    def kernel_channels(self) -> int:
        return self.k * self.k * self.s * self.s

    def compress_spec(self) -> ConvSpec:
        return ConvSpec(self.channels, self.compressed, 1, 1)

    def kernelgen_spec(self) -> ConvSpec:
        g = self.kernelgen_size
        return ConvSpec(self.compressed, self.kernel_channels, g, g, stride=1, padding=g // 2)


@dataclass
class SauParams:
    """Weights of the two SAKG convolutions (and a same-shape grad holder)."""

    compress_w: np.ndarray
    compress_b: np.ndarray
    kernelgen_w: np.ndarray
    kernelgen_b: np.ndarray

    def validate(self, cfg: SauConfig) -> None:
        cs, ks = cfg.compress_spec(), cfg.kernelgen_spec()
        _require(self.compress_w.shape == (cs.out_channels, cs.in_channels, 1, 1),
                 f"compress weight shape {self.compress_w.shape} inconsistent with config")
        _require(self.kernelgen_w.shape == (ks.out_channels, ks.in_channels, ks.kernel_h, ks.kernel_w),
                 f"kernelgen weight shape {self.kernelgen_w.shape} inconsistent with config")
        _require(self.kernelgen_w.shape[0] == cfg.kernel_channels,
                 "kernelgen output channels must equal k^2 * s^2")
        _require(self.compress_b.shape == (cs.out_channels,) and
                 self.kernelgen_b.shape == (ks.out_channels,), "bias shapes inconsistent")

def init_sau_params(cfg: SauConfig, rng: np.random.Generator, dtype=np.float32) -> SauParams:
    """Fan-in scaled normal weights, zero biases."""
    cs, ks = cfg.compress_spec(), cfg.kernelgen_spec()

    def w(spec):
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        shape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        return (rng.normal(size=shape) / np.sqrt(fan_in)).astype(dtype)

    return SauParams(w(cs), np.zeros(cs.out_channels, dtype=dtype),
                     w(ks), np.zeros(ks.out_channels, dtype=dtype))


@dataclass
class SauContext:
    """Forward intermediates saved for sau_backward."""

    cfg: SauConfig
    params: SauParams
    f: np.ndarray
    f_c: np.ndarray
    f_n: np.ndarray


# ---------------------------------------------------------------------------
# SAKG: kernel field generation


def sakg_forward(f: np.ndarray, params: SauParams, cfg: SauConfig) -> np.ndarray:
    """Predict the normalized kernel field f_n of shape (N, k^2, H*s, W*s).

    Every per-pixel kernel is nonnegative and sums to 1 over the k^2 axis.
    """
    f_n, _ = _sakg_forward_ctx(f, params, cfg)
    return f_n


def _sakg_forward_ctx(f, params, cfg):
    _require(f.ndim == 4 and f.shape[1] == cfg.channels,
             f"input shape {f.shape} inconsistent with C={cfg.channels}")
    params.validate(cfg)
    f_c = ops.conv2d(f, params.compress_w, params.compress_b, cfg.compress_spec())
    f_k = ops.conv2d(f_c, params.kernelgen_w, params.kernelgen_b, cfg.kernelgen_spec())
    f_s = ops.pixel_shuffle(f_k, cfg.s)
    f_n = ops.channel_softmax(f_s)
    return f_n, f_c


def sakg_backward(ctx: SauContext, d_fn: np.ndarray):
    """Gradients of sakg_forward w.r.t. the input feature and both convs."""
    cfg, params = ctx.cfg, ctx.params
    d_fs = ops.channel_softmax_backward(ctx.f_n, d_fn)
    d_fk = ops.pixel_shuffle_backward(d_fs, cfg.s)
    d_fc, d_kw, d_kb = ops.conv2d_backward(ctx.f_c, params.kernelgen_w, cfg.kernelgen_spec(), d_fk)
    d_f, d_cw, d_cb = ops.conv2d_backward(ctx.f, params.compress_w, cfg.compress_spec(), d_fc)
    return d_f, SauParams(d_cw, d_cb, d_kw, d_kb)


# ---------------------------------------------------------------------------
# SAFU: kernel application


def _check_field(f, f_n, cfg):
    n, c, h, w = f.shape
    want = (n, cfg.k * cfg.k, h * cfg.s, w * cfg.s)
    _require(f_n.shape == want, f"kernel field shape {f_n.shape} != expected {want}")


def safu_forward(f: np.ndarray, f_n: np.ndarray, cfg: SauConfig) -> np.ndarray:
    """Weighted-sum upsampling of f under the kernel field f_n."""
    _require(f.ndim == 4 and f.shape[1] == cfg.channels,
             f"input shape {f.shape} inconsistent with C={cfg.channels}")
    _check_field(f, f_n, cfg)
    n, c, h, w = f.shape
    k, s, r = cfg.k, cfg.s, cfg.k // 2
    hs, ws = h * s, w * s
    f_e = ops.nearest_upsample(f, s)
    pad = ops._pad2d(f_e, r)
    out = np.zeros((n, c, hs, ws), dtype=f.dtype)
    for a in range(k):
        for b in range(k):
            out += pad[:, :, a : a + hs, b : b + ws] * f_n[:, a * k + b][:, None]
    return out


def safu_backward(f: np.ndarray, f_n: np.ndarray, cfg: SauConfig, dy: np.ndarray):
    """Gradients of safu_forward w.r.t. (f, f_n)."""
    n, c, h, w = f.shape
    k, s, r = cfg.k, cfg.s, cfg.k // 2
    hs, ws = h * s, w * s
    f_e = ops.nearest_upsample(f, s)
    pad = ops._pad2d(f_e, r)
    dpad = np.zeros_like(pad)
    d_fn = np.zeros_like(f_n)
    for a in range(k):
        for b in range(k):
            window = pad[:, :, a : a + hs, b : b + ws]
            d_fn[:, a * k + b] = (dy * window).sum(axis=1)
            dpad[:, :, a : a + hs, b : b + ws] += dy * f_n[:, a * k + b][:, None]
    d_fe = dpad[:, :, r : r + hs, r : r + ws] if r else dpad
    d_f = ops.nearest_upsample_backward(d_fe, s)
    return d_f, d_fn


# ---------------------------------------------------------------------------
# Composition


def sau_forward(f: np.ndarray, params: SauParams, cfg: SauConfig) -> np.ndarray:
    """Full operator: (N,C,H,W) -> (N,C,H*s,W*s)."""
    out, _ = sau_forward_ctx(f, params, cfg)
    return out


def sau_forward_ctx(f: np.ndarray, params: SauParams, cfg: SauConfig):
    f_n, f_c = _sakg_forward_ctx(f, params, cfg)
    out = safu_forward(f, f_n, cfg)
    return out, SauContext(cfg=cfg, params=params, f=f, f_c=f_c, f_n=f_n)


def sau_backward(ctx: SauContext, dy: np.ndarray):
    """Gradients of sau_forward for the input feature and all SAKG weights.

    The output is bilinear in (expanded feature, kernel field), so the
    upstream splits into a direct feature path and a path chained through
    softmax, shuffle, and the two convolutions.
    """
    if ctx.f_n is None:
        raise ValueError("missing saved context")
    d_f_direct, d_fn = safu_backward(ctx.f, ctx.f_n, ctx.cfg, dy)
    d_f_kernel, d_params = sakg_backward(ctx, d_fn)
    return d_f_direct + d_f_kernel, d_params


# ---------------------------------------------------------------------------
# Loop-based reference (also the benchmark baseline)


@njit(cache=True)
def _naive_conv2d_kernel(x, w, b, stride, pad, out):  # pragma: no cover - compiled
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh, ow = out.shape[2], out.shape[3]
    for ni in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = b[co]
                    for ci in range(cin):
                        for a in range(kh):
                            for bb in range(kw):
                                yy = i * stride + a - pad
                                xx = j * stride + bb - pad
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc += x[ni, ci, yy, xx] * w[co, ci, a, bb]
                    out[ni, co, i, j] = acc


@njit(cache=True)
def _naive_fuse_kernel(f, f_k, k, s, out):  # pragma: no cover - compiled
    n, c, h, w = f.shape
    hs, ws = h * s, w * s
    r = k // 2
    kk = k * k
    logits = np.empty(kk, dtype=f.dtype)
    weights = np.empty(kk, dtype=f.dtype)
    for ni in range(n):
        for i2 in range(hs):
            for j2 in range(ws):
                hi, dh = i2 // s, i2 % s
                wj, dw = j2 // s, j2 % s
                m = f_k[ni, dh * s + dw, hi, wj]
                for idx in range(kk):
                    v = f_k[ni, idx * s * s + dh * s + dw, hi, wj]
                    logits[idx] = v
                    if v > m:
                        m = v
                z = 0.0
                for idx in range(kk):
                    e = np.exp(logits[idx] - m)
                    weights[idx] = e
                    z += e
                for idx in range(kk):
                    weights[idx] = weights[idx] / z
                for ci in range(c):
                    acc = 0.0
                    for p in range(-r, r + 1):
                        for q in range(-r, r + 1):
                            yy = i2 + p
                            xx = j2 + q
                            if 0 <= yy < hs and 0 <= xx < ws:
                                acc += f[ni, ci, yy // s, xx // s] * weights[(p + r) * k + (q + r)]
                    out[ni, ci, i2, j2] = acc


def _naive_conv2d(x, w, b, spec: ConvSpec):
    oh, ow = spec.conv_out_hw(x.shape[2], x.shape[3])
    out = np.empty((x.shape[0], spec.out_channels, oh, ow), dtype=x.dtype)
    bias = b if b is not None else np.zeros(spec.out_channels, dtype=x.dtype)
    _naive_conv2d_kernel(x, w, bias, spec.stride, spec.padding, out)
    return out


def sau_naive(f: np.ndarray, params: SauParams, cfg: SauConfig) -> np.ndarray:
    """Same result as sau_forward via direct nested loops.

    The kernel-generation convolutions are evaluated by literal loops and
    the per-pixel softmax-weighted sum is computed in place, without
    materializing shuffled or unfolded intermediates.
    """
    _require(f.ndim == 4 and f.shape[1] == cfg.channels,
             f"input shape {f.shape} inconsistent with C={cfg.channels}")
    params.validate(cfg)
    f = np.ascontiguousarray(f)
    f_c = _naive_conv2d(f, params.compress_w, params.compress_b, cfg.compress_spec())
    f_k = _naive_conv2d(f_c, params.kernelgen_w, params.kernelgen_b, cfg.kernelgen_spec())
    n, c, h, w = f.shape
    out = np.empty((n, c, h * cfg.s, w * cfg.s), dtype=f.dtype)
    _naive_fuse_kernel(f, f_k, cfg.k, cfg.s, out)
    return out


# ---------------------------------------------------------------------------
# Seeded equivalence sweep (used by tests and the oracle-check subcommand)


def random_case(seed: int):
    """One seeded random (f, params, cfg) with shapes up to 2x16x8x8,
    k in {1,3,5}, s in {1,2}, float64."""
    from .rng import make_rng

    rng = make_rng(seed)
    n = int(rng.integers(1, 3))
    c = int(rng.integers(1, 17))
    h = int(rng.integers(1, 9))
    w = int(rng.integers(1, 9))
    cfg = SauConfig(
        channels=c,
        compressed=int(rng.integers(1, c + 1)),
        k=int(rng.choice([1, 3, 5])),
        s=int(rng.choice([1, 2])),
    )
    f = rng.normal(size=(n, c, h, w))
    params = init_sau_params(cfg, rng, dtype=np.float64)
    return f, params, cfg


def oracle_sweep(cases: int, seed: int) -> list[tuple[str, float]]:
    """Max |sau_forward - sau_naive| per seeded random case."""
    from .rng import derive_seed

    results = []
    for i in range(cases):
        f, params, cfg = random_case(derive_seed(seed, i))
        err = float(np.abs(sau_forward(f, params, cfg) - sau_naive(f, params, cfg)).max())
        desc = f"{f.shape[0]}x{f.shape[1]}x{f.shape[2]}x{f.shape[3]}_k{cfg.k}_s{cfg.s}"
        results.append((desc, err))
    return results
