"""The local/global GAN composition.

One parameter-sharing encoder feeds a swappable feature upsampler; the
upsampled feature drives an image-level global head, mask-filtered
class-specific local branches with a void-filtered classification head,
and a weight-map fuser that blends the two image branches with a per-pixel
softmax convex combination. Patch discriminators score (layout, image)
pairs, plus (conditional image, image) pairs in cross-view mode.

All backward passes are explicit; ``Generator.backward`` chains the
upstream image/loss gradients through every branch and accumulates into
the layers' gradient buffers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .config import RunConfig
from .layers import Conv2d, InstanceNorm, Layer, LeakyReLU, Linear, ReLU, Sequential, TransposeConv2d
from .ops import ConvSpec
from .rng import make_rng
from .sau import SauConfig, SauParams, sau_backward, sau_forward_ctx

GAIN = math.sqrt(2.0)  # pre-leaky-relu convolutions


# ---------------------------------------------------------------------------
# Feature upsamplers (the swappable stage between encoder and heads)


class InterpUpsampler(Layer):
    def __init__(self, kind: str, s: int):
        super().__init__()
        self.kind = kind
        self.s = s

    def forward(self, f):
        if self.kind == "nearest":
            return ops.nearest_upsample(f, self.s), f.shape
        if self.kind == "bilinear":
            return ops.bilinear_upsample(f, self.s), f.shape
        return ops.bicubic_upsample(f, self.s), f.shape

    def backward(self, cache, dy):
        if self.kind == "nearest":
            return ops.nearest_upsample_backward(dy, self.s)
        if self.kind == "bilinear":
            return ops.bilinear_upsample_backward(dy, cache, self.s)
        return ops.bicubic_upsample_backward(dy, cache, self.s)


class DeconvUpsampler(TransposeConv2d):
    """Learned upsampling: 4x4 stride-2 transpose conv (3x3 stride 1 at s=1)."""

    def __init__(self, channels: int, s: int, rng, dtype=np.float32):
        if s == 1:
            spec = ConvSpec(channels, channels, 3, 3, stride=1, padding=1)
        elif s == 2:
            spec = ConvSpec(channels, channels, 4, 4, stride=2, padding=1)
        else:
            raise ValueError("deconv upsampler supports s in {1, 2}")
        super().__init__(spec, rng, dtype=dtype)


class PixelShuffleUpsampler(Layer):
    """Learned upsampling: 3x3 conv to C*s^2 channels, then pixel shuffle."""

    def __init__(self, channels: int, s: int, rng, dtype=np.float32):
        super().__init__()
        self.s = s
        self.conv = Conv2d(ConvSpec(channels, channels * s * s, 3, 3, padding=1), rng, dtype=dtype)
        self.params = self.conv.params
        self.grads = self.conv.grads

    def forward(self, f):
        y, cache = self.conv.forward(f)
        return ops.pixel_shuffle(y, self.s), cache

    def backward(self, cache, dy):
        return self.conv.backward(cache, ops.pixel_shuffle_backward(dy, self.s))


class SauUpsampler(Layer):
    def __init__(self, channels: int, compressed: int, k: int, s: int, rng, dtype=np.float32):
        super().__init__()
        self.cfg = SauConfig(channels=channels, compressed=compressed, k=k, s=s)
        from .sau import init_sau_params

        p = init_sau_params(self.cfg, rng, dtype=dtype)
        for name in ("compress_w", "compress_b", "kernelgen_w", "kernelgen_b"):
            self._register(name, getattr(p, name))

    def _as_params(self) -> SauParams:
        return SauParams(self.params["compress_w"], self.params["compress_b"],
                         self.params["kernelgen_w"], self.params["kernelgen_b"])

    def forward(self, f):
        return sau_forward_ctx(f, self._as_params(), self.cfg)

    def backward(self, cache, dy):
        d_f, d_p = sau_backward(cache, dy)
        self.grads["compress_w"] += d_p.compress_w
        self.grads["compress_b"] += d_p.compress_b
        self.grads["kernelgen_w"] += d_p.kernelgen_w
        self.grads["kernelgen_b"] += d_p.kernelgen_b
        return d_f


def make_upsampler(kind: str, channels: int, compressed: int, k: int, s: int,
                   rng, dtype=np.float32) -> Layer:
    if kind in ("nearest", "bilinear", "bicubic"):
        return InterpUpsampler(kind, s)
    if kind == "deconv":
        return DeconvUpsampler(channels, s, rng, dtype)
    if kind == "pixelshuffle":
        return PixelShuffleUpsampler(channels, s, rng, dtype)
    if kind == "sau":
        return SauUpsampler(channels, compressed, k, s, rng, dtype)
    raise ValueError(f"unknown upsampler {kind!r}")


# ---------------------------------------------------------------------------
# Standalone pieces (also exercised directly by the gradcheck registry)


def mask_filter(f_up: np.ndarray, masks: np.ndarray) -> list[np.ndarray]:
    """Per-class filtered features F_i = mask_i * f_up.

    masks is (B, N, H, W) binary; it is nearest-resized to the feature
    extents if they differ (exact when the upsampled feature is at image
    resolution).
    """
    if masks.shape[2:] != f_up.shape[2:]:
        masks = ops.nearest_resize(masks, f_up.shape[2], f_up.shape[3])
    if masks.shape[0] != f_up.shape[0]:
        raise ops.ShapeError(f"mask batch {masks.shape[0]} != feature batch {f_up.shape[0]}")
    return [f_up * masks[:, i : i + 1] for i in range(masks.shape[1])]


def semantic_pool(class_feats: list[np.ndarray], masks: np.ndarray):
    """Per-class mean over each class's own mask -> (B, N, C).

    Pixels outside mask_i never contribute to row i; void classes pool to
    exactly zero."""
    stacked = np.stack(class_feats, axis=1)  # (B, N, C, H, W)
    counts = masks.sum(axis=(2, 3))  # (B, N)
    denom = np.maximum(counts, 1.0)
    pooled = np.einsum("bnchw,bnhw->bnc", stacked, masks) / denom[:, :, None]
    return pooled, denom


def classify_classes(class_feats: list[np.ndarray], masks: np.ndarray,
                     valid: np.ndarray, fc_w: np.ndarray, fc_b: np.ndarray):
    """Semantic-pooled class logits (B,N,N) and the void-filtered CE loss."""
    from .losses import class_ce

    pooled, _ = semantic_pool(class_feats, masks)
    logits = pooled @ fc_w.T + fc_b
    loss, _ = class_ce(logits, valid)
    return logits, loss


class WeightFuser(Layer):
    """Two-channel weight-map head and the convex image fusion.

    The conv stack (two 3x3 stride-2 transpose convs with instance norm
    and relu into a 1x1 projection, widths 128/64/2 by default) expands
    by ~4x, so its input is first nearest-reduced to quarter resolution
    and the resulting logits are nearest-resized onto the exact image
    extents (the stride arithmetic cannot land on them directly). A
    channel softmax then yields w_global + w_local = 1 per pixel.
    """

    def __init__(self, channels: int, rng, widths: tuple[int, int] = (128, 64), dtype=np.float32):
        super().__init__()
        w1, w2 = widths
        self.stack = Sequential([
            TransposeConv2d(ConvSpec(channels, w1, 3, 3, stride=2, padding=1), rng, GAIN, dtype),
            InstanceNorm(w1, dtype=dtype),
            ReLU(),
            TransposeConv2d(ConvSpec(w1, w2, 3, 3, stride=2, padding=1), rng, GAIN, dtype),
            InstanceNorm(w2, dtype=dtype),
            ReLU(),
            Conv2d(ConvSpec(w2, 2, 1, 1), rng, dtype=dtype),
        ])

    def forward(self, f_up, i_global, i_local):
        h, w = f_up.shape[2], f_up.shape[3]
        small = ops.nearest_resize(f_up, max(1, -(-h // 4)), max(1, -(-w // 4)))
        mid, caches = self.stack.forward(small)
        logits = ops.nearest_resize(mid, h, w)
        wf = ops.channel_softmax(logits)
        w_g, w_l = wf[:, 0:1], wf[:, 1:2]
        image = i_global * w_g + i_local * w_l
        cache = (f_up.shape, small.shape, mid.shape, caches, wf, i_global, i_local)
        return image, w_g, w_l, cache

    def backward(self, cache, d_image):
        f_shape, small_shape, mid_shape, caches, wf, i_global, i_local = cache
        w_g, w_l = wf[:, 0:1], wf[:, 1:2]
        d_ig = d_image * w_g
        d_il = d_image * w_l
        d_wf = np.concatenate([(d_image * i_global).sum(axis=1, keepdims=True),
                               (d_image * i_local).sum(axis=1, keepdims=True)], axis=1)
        d_logits = ops.channel_softmax_backward(wf, d_wf)
        d_mid = ops.nearest_resize_backward(d_logits, mid_shape)
        d_small = self.stack.backward(caches, d_mid)
        d_f_up = ops.nearest_resize_backward(d_small, f_shape)
        return d_f_up, d_ig, d_il

    def zero_grads(self) -> None:
        self.stack.zero_grads()


def make_encoder(in_channels: int, channels: int, s: int, rng, dtype=np.float32) -> Sequential:
    """Shared backbone; reduces spatial extents by the upsample factor s."""
    return Sequential([
        Conv2d(ConvSpec(in_channels, channels, 3, 3, padding=1), rng, GAIN, dtype),
        LeakyReLU(0.2),
        Conv2d(ConvSpec(channels, channels, 3, 3, stride=s, padding=1), rng, GAIN, dtype),
        LeakyReLU(0.2),
        Conv2d(ConvSpec(channels, channels, 3, 3, padding=1), rng, GAIN, dtype),
        LeakyReLU(0.2),
    ])


def make_global_head(channels: int, rng, dtype=np.float32) -> Sequential:
    return Sequential([
        Conv2d(ConvSpec(channels, channels, 3, 3, padding=1), rng, GAIN, dtype),
        LeakyReLU(0.2),
        Conv2d(ConvSpec(channels, 3, 3, 3, padding=1), rng, dtype=dtype),
    ])


def make_local_branch(channels: int, hidden: int, rng, dtype=np.float32) -> Sequential:
    return Sequential([
        Conv2d(ConvSpec(channels, hidden, 3, 3, padding=1), rng, GAIN, dtype),
        LeakyReLU(0.2),
        Conv2d(ConvSpec(hidden, hidden, 3, 3, padding=1), rng, GAIN, dtype),
        LeakyReLU(0.2),
        Conv2d(ConvSpec(hidden, 3, 1, 1), rng, dtype=dtype),
    ])


def make_discriminator(in_channels: int, rng, dtype=np.float32) -> Sequential:
    """Three-layer strided patch discriminator producing a logit grid."""
    return Sequential([
        Conv2d(ConvSpec(in_channels, 32, 4, 4, stride=2, padding=1), rng, GAIN, dtype),
        LeakyReLU(0.2),
        Conv2d(ConvSpec(32, 64, 4, 4, stride=2, padding=1), rng, GAIN, dtype),
        LeakyReLU(0.2),
        Conv2d(ConvSpec(64, 1, 4, 4, stride=1, padding=1), rng, dtype=dtype),
    ])


# ---------------------------------------------------------------------------
# Generator


@dataclass
class GenForward:
    """Everything one generator pass produced (outputs plus caches)."""

    x: np.ndarray
    f_up: np.ndarray
    i_global: np.ndarray
    image: np.ndarray
    masks: np.ndarray | None = None
    class_feats: list[np.ndarray] | None = None
    class_outs: list[np.ndarray] | None = None
    i_local: np.ndarray | None = None
    pooled: np.ndarray | None = None
    denom: np.ndarray | None = None
    logits: np.ndarray | None = None
    w_g: np.ndarray | None = None
    w_l: np.ndarray | None = None
    caches: dict = field(default_factory=dict)


class Generator:
    def __init__(self, cfg: RunConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        n, c = cfg.n_classes, cfg.base_channels
        in_ch = n + (3 if cfg.mode == "crossview" else 0)
        self.encoder = make_encoder(in_ch, c, cfg.s, rng, dtype)
        self.upsampler = make_upsampler(cfg.upsampler, c, cfg.c_compressed, cfg.k, cfg.s, rng, dtype)
        self.global_head = make_global_head(c, rng, dtype)
        self.local_branches = ([make_local_branch(c, cfg.local_channels, rng, dtype)
                                for _ in range(n)] if cfg.use_local else [])
        self.fuse_conv = (Conv2d(ConvSpec(3 * n, 3, 3, 3, padding=1), rng, dtype=dtype)
                          if cfg.use_local and cfg.fusion == "conv" else None)
        self.classifier = Linear(c, n, rng, dtype) if cfg.use_local else None
        self.weight_fuser = (WeightFuser(c, rng, dtype=dtype)
                             if cfg.use_weight_map and cfg.use_local else None)

    def forward(self, onehot: np.ndarray, cond: np.ndarray | None = None) -> GenForward:
        cfg = self.cfg
        if cfg.mode == "crossview":
            if cond is None:
                raise ValueError("cross-view mode needs the conditional image")
            x = np.concatenate([cond, onehot], axis=1)
        else:
            if cond is not None:
                raise ValueError("conditional image only applies to cross-view mode")
            x = onehot
        if x.shape[1] != self.encoder.layers[0].spec.in_channels:
            raise ops.ShapeError(f"encoder input channels {x.shape[1]} != "
                                 f"{self.encoder.layers[0].spec.in_channels}")
        caches = {}
        f, caches["enc"] = self.encoder.forward(x)
        f_up, caches["up"] = self.upsampler.forward(f)
        i_global, caches["glob"] = self.global_head.forward(f_up)
        out = GenForward(x=x, f_up=f_up, i_global=i_global, image=i_global, caches=caches)

        if cfg.use_local:
            out.masks = onehot if onehot.shape[2:] == f_up.shape[2:] else \
                ops.nearest_resize(onehot, f_up.shape[2], f_up.shape[3])
            out.class_feats = mask_filter(f_up, out.masks)
            out.class_outs = []
            caches["branches"] = []
            for branch, feat in zip(self.local_branches, out.class_feats):
                o, c_ = branch.forward(feat)
                out.class_outs.append(o)
                caches["branches"].append(c_)
            if cfg.fusion == "add":
                i_local = out.class_outs[0].copy()
                for o in out.class_outs[1:]:
                    i_local += o
            else:
                cat = np.concatenate(out.class_outs, axis=1)
                i_local, caches["fuse"] = self.fuse_conv.forward(cat)
            out.i_local = i_local
            out.pooled, out.denom = semantic_pool(out.class_feats, out.masks)
            out.logits, caches["fc"] = self.classifier.forward(out.pooled)

        if cfg.use_weight_map and cfg.use_local:
            out.image, out.w_g, out.w_l, caches["wf"] = \
                self.weight_fuser.forward(f_up, i_global, out.i_local)
        elif cfg.use_local:
            out.image = i_global + out.i_local
        return out

    def backward(self, out: GenForward, d_image: np.ndarray,
                 d_class_outs: list[np.ndarray] | None = None,
                 d_logits: np.ndarray | None = None) -> None:
        """Accumulate parameter gradients from the upstream image gradient
        plus optional per-class-output and class-logit gradients."""
        cfg = self.cfg
        caches = out.caches
        if cfg.use_weight_map and cfg.use_local:
            d_f_up, d_ig, d_il = self.weight_fuser.backward(caches["wf"], d_image)
        elif cfg.use_local:
            d_f_up = np.zeros_like(out.f_up)
            d_ig = d_image
            d_il = d_image
        else:
            d_f_up = np.zeros_like(out.f_up)
            d_ig = d_image
            d_il = None

        if cfg.use_local:
            if cfg.fusion == "add":
                d_outs = [d_il.copy() for _ in range(cfg.n_classes)]
            else:
                d_cat = self.fuse_conv.backward(caches["fuse"], d_il)
                d_outs = [d_cat[:, 3 * i : 3 * i + 3] for i in range(cfg.n_classes)]
            if d_class_outs is not None:
                d_outs = [a + b for a, b in zip(d_outs, d_class_outs)]
            d_feats = [branch.backward(c_, d_o) for branch, c_, d_o in
                       zip(self.local_branches, caches["branches"], d_outs)]
            if d_logits is not None:
                d_pooled = self.classifier.backward(caches["fc"], d_logits)
                for i in range(cfg.n_classes):
                    scale = (d_pooled[:, i] / out.denom[:, i, None])[:, :, None, None]
                    d_feats[i] = d_feats[i] + out.masks[:, i : i + 1] * scale
            for i, d_feat in enumerate(d_feats):
                d_f_up += out.masks[:, i : i + 1] * d_feat

        d_f_up += self.global_head.backward(caches["glob"], d_ig)
        d_f = self.upsampler.backward(caches["up"], d_f_up)
        self.encoder.backward(caches["enc"], d_f)

    # -- parameter plumbing ------------------------------------------------

    def param_index(self) -> dict[str, tuple[Layer, str]]:
        idx = {}
        idx.update(self.encoder.named_params("enc"))
        for k in self.upsampler.params:
            idx[f"up.{k}"] = (self.upsampler, k)
        idx.update(self.global_head.named_params("glob"))
        for i, branch in enumerate(self.local_branches):
            idx.update(branch.named_params(f"local.{i}"))
        if self.fuse_conv is not None:
            for k in self.fuse_conv.params:
                idx[f"fuse.{k}"] = (self.fuse_conv, k)
        if self.classifier is not None:
            for k in self.classifier.params:
                idx[f"fc.{k}"] = (self.classifier, k)
        if self.weight_fuser is not None:
            idx.update(self.weight_fuser.stack.named_params("wmap"))
        return idx

    def zero_grads(self) -> None:
        for layer, key in self.param_index().values():
            layer.grads[key][...] = 0


# ---------------------------------------------------------------------------
# Full model


class LocalGlobalGan:
    def __init__(self, cfg: RunConfig, rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else make_rng(cfg.seed)
        self.cfg = cfg
        self.gen = Generator(cfg, rng, dtype)
        self.d_s = make_discriminator(cfg.n_classes + 3, rng, dtype)
        self.d_i = make_discriminator(6, rng, dtype) if cfg.mode == "crossview" else None

    def disc_semantic(self, image: np.ndarray, onehot: np.ndarray):
        """Patch logits for a (layout, image) pair."""
        return self.d_s.forward(np.concatenate([onehot, image], axis=1))

    def disc_image(self, image: np.ndarray, cond: np.ndarray):
        """Patch logits for a (conditional image, image) pair (cross-view)."""
        if self.d_i is None:
            raise ValueError("image-guided discriminator only exists in cross-view mode")
        return self.d_i.forward(np.concatenate([cond, image], axis=1))

    def generator_index(self) -> dict[str, tuple[Layer, str]]:
        return self.gen.param_index()

    def discriminator_index(self) -> dict[str, tuple[Layer, str]]:
        idx = self.d_s.named_params("d_s")
        if self.d_i is not None:
            idx.update(self.d_i.named_params("d_i"))
        return idx

    def all_slots(self) -> dict[str, np.ndarray]:
        idx = {**self.generator_index(), **self.discriminator_index()}
        return {name: layer.params[key] for name, (layer, key) in idx.items()}

    def load_slots(self, tensors: dict[str, np.ndarray]) -> None:
        slots = {**self.generator_index(), **self.discriminator_index()}
        missing = sorted(set(slots) - set(tensors))
        extra = sorted(set(tensors) - set(slots))
        if missing or extra:
            raise ValueError(f"checkpoint mismatch; missing={missing} extra={extra}")
        for name, (layer, key) in slots.items():
            if tensors[name].shape != layer.params[key].shape:
                raise ValueError(f"slot {name}: shape {tensors[name].shape} != "
                                 f"{layer.params[key].shape}")
            layer.params[key][...] = tensors[name].astype(layer.params[key].dtype)


# ---------------------------------------------------------------------------
# Gradcheck registry entries for the composition ops


def _with_params(stack: Sequential, inputs: dict, names: dict[str, tuple[int, str]]):
    for key, (layer_i, pkey) in names.items():
        stack.layers[layer_i].params[pkey] = inputs[key]


def _stack_param_grads(stack: Sequential, names: dict[str, tuple[int, str]]):
    return {key: stack.layers[layer_i].grads[pkey].copy()
            for key, (layer_i, pkey) in names.items()}


def _random_masks(rng, b, n, h, w):
    labels = rng.integers(0, n, size=(b, h, w))
    masks = np.zeros((b, n, h, w))
    for i in range(n):
        masks[:, i][labels == i] = 1.0
    valid = (masks.sum(axis=(2, 3)) > 0).astype(np.float64)
    return masks, valid


def gradcheck_entries(OpCheck) -> list:
    """Finite-difference checks for every differentiable composition op."""
    from . import losses

    entries = []
    rng0 = make_rng(777)

    # encode: tiny instance of the shared backbone, input + all conv params
    enc = make_encoder(in_channels=2, channels=3, s=2, rng=rng0, dtype=np.float64)
    enc_names = {"w0": (0, "w"), "b0": (0, "b"), "w1": (2, "w"), "w2": (4, "w")}

    def enc_inputs(rng):
        inp = {"x": rng.normal(size=(1, 2, 6, 6))}
        for key, (layer_i, pkey) in enc_names.items():
            inp[key] = rng.normal(size=enc.layers[layer_i].params[pkey].shape) * 0.5
        return inp

    def enc_forward(inp):
        _with_params(enc, inp, enc_names)
        return enc.forward(inp["x"])[0]

    def enc_backward(inp, dy):
        _with_params(enc, inp, enc_names)
        enc.zero_grads()
        _, caches = enc.forward(inp["x"])
        dx = enc.backward(caches, dy)
        return {"x": dx, **_stack_param_grads(enc, enc_names)}

    entries.append(OpCheck("encode", enc_inputs, enc_forward, enc_backward))

    # mask_filter: stacked per-class features w.r.t. the shared feature map
    def mf_inputs(rng):
        masks, _ = _random_masks(rng, 1, 3, 4, 4)
        return {"f_up": rng.normal(size=(1, 2, 4, 4)), "masks": masks}

    entries.append(OpCheck(
        "mask_filter",
        mf_inputs,
        lambda inp: np.stack(mask_filter(inp["f_up"], inp["masks"]), axis=1),
        lambda inp, dy: {"f_up": sum(inp["masks"][:, i : i + 1] * dy[:, i]
                                     for i in range(inp["masks"].shape[1]))},
    ))

    # local_generate, both fusion modes, w.r.t. stacked filtered features
    for fusion in ("add", "conv"):
        branches = [make_local_branch(2, 3, rng0, dtype=np.float64) for _ in range(3)]
        fuse = Conv2d(ConvSpec(9, 3, 3, 3, padding=1), rng0, dtype=np.float64)

        def lg_forward(inp, _branches=branches, _fuse=fuse, _fusion=fusion):
            outs = [b.forward(inp["feats"][:, i])[0] for i, b in enumerate(_branches)]
            if _fusion == "add":
                return sum(outs)
            return _fuse.forward(np.concatenate(outs, axis=1))[0]

        def lg_backward(inp, dy, _branches=branches, _fuse=fuse, _fusion=fusion):
            for b in _branches:
                b.zero_grads()
            caches = []
            outs = []
            for i, b in enumerate(_branches):
                o, c = b.forward(inp["feats"][:, i])
                outs.append(o)
                caches.append(c)
            if _fusion == "add":
                d_outs = [dy] * 3
            else:
                _fuse.zero_grads()
                _, fc = _fuse.forward(np.concatenate(outs, axis=1))
                d_cat = _fuse.backward(fc, dy)
                d_outs = [d_cat[:, 3 * i : 3 * i + 3] for i in range(3)]
            d_feats = [b.backward(c, d) for b, c, d in zip(_branches, caches, d_outs)]
            return {"feats": np.stack(d_feats, axis=1)}

        entries.append(OpCheck(
            f"local_generate_{fusion}",
            lambda rng: {"feats": rng.normal(size=(1, 3, 2, 4, 4))},
            lg_forward,
            lg_backward,
        ))

    # global_generate: small image head
    head = make_global_head(3, rng0, dtype=np.float64)
    head_names = {"hw0": (0, "w"), "hw1": (2, "w"), "hb1": (2, "b")}

    def head_inputs(rng):
        inp = {"f_up": rng.normal(size=(1, 3, 4, 4))}
        for key, (layer_i, pkey) in head_names.items():
            inp[key] = rng.normal(size=head.layers[layer_i].params[pkey].shape) * 0.5
        return inp

    def head_forward(inp):
        _with_params(head, inp, head_names)
        return head.forward(inp["f_up"])[0]

    def head_backward(inp, dy):
        _with_params(head, inp, head_names)
        head.zero_grads()
        _, caches = head.forward(inp["f_up"])
        dx = head.backward(caches, dy)
        return {"f_up": dx, **_stack_param_grads(head, head_names)}

    entries.append(OpCheck("global_generate", head_inputs, head_forward, head_backward))

    # classify_classes: pooled logits + void-filtered CE w.r.t. features and fc
    def cc_inputs(rng):
        masks, valid = _random_masks(rng, 1, 3, 4, 4)
        return {"feats": rng.normal(size=(1, 3, 2, 4, 4)),
                "fc_w": rng.normal(size=(3, 2)), "fc_b": rng.normal(size=3),
                "masks": masks, "valid": valid}

    def cc_forward(inp):
        feats = [inp["feats"][:, i] for i in range(3)]
        _, loss = classify_classes(feats, inp["masks"], inp["valid"], inp["fc_w"], inp["fc_b"])
        return np.asarray(loss)

    def cc_backward(inp, dy):
        feats = [inp["feats"][:, i] for i in range(3)]
        pooled, denom = semantic_pool(feats, inp["masks"])
        logits = pooled @ inp["fc_w"].T + inp["fc_b"]
        _, d_logits = losses.class_ce(logits, inp["valid"])
        d_logits = d_logits * dy
        d_pooled = d_logits @ inp["fc_w"]
        d_w = np.tensordot(d_logits, pooled, axes=([0, 1], [0, 1]))
        d_b = d_logits.sum(axis=(0, 1))
        d_feats = np.stack(
            [inp["masks"][:, i : i + 1] * (d_pooled[:, i] / denom[:, i, None])[:, :, None, None]
             for i in range(3)], axis=1)
        return {"feats": d_feats, "fc_w": d_w, "fc_b": d_b}

    entries.append(OpCheck("classify_classes", cc_inputs, cc_forward, cc_backward))

    # weight_fuse: convex fusion w.r.t. both images, the feature, and the stack
    wf = WeightFuser(2, rng0, widths=(4, 3), dtype=np.float64)
    wf_names = {"tw0": (0, "w"), "g0": (1, "gamma"), "tw1": (3, "w"),
                "cb": (6, "b"), "cw": (6, "w")}

    def wf_inputs(rng):
        inp = {"f_up": rng.normal(size=(1, 2, 4, 4)),
               "i_g": rng.normal(size=(1, 3, 4, 4)),
               "i_l": rng.normal(size=(1, 3, 4, 4))}
        for key, (layer_i, pkey) in wf_names.items():
            inp[key] = rng.normal(size=wf.stack.layers[layer_i].params[pkey].shape) * 0.5
        return inp

    def wf_forward(inp):
        _with_params(wf.stack, inp, wf_names)
        return wf.forward(inp["f_up"], inp["i_g"], inp["i_l"])[0]

    def wf_backward(inp, dy):
        _with_params(wf.stack, inp, wf_names)
        wf.zero_grads()
        _, _, _, cache = wf.forward(inp["f_up"], inp["i_g"], inp["i_l"])
        d_f_up, d_ig, d_il = wf.backward(cache, dy)
        return {"f_up": d_f_up, "i_g": d_ig, "i_l": d_il,
                **_stack_param_grads(wf.stack, wf_names)}

    entries.append(OpCheck("weight_fuse", wf_inputs, wf_forward, wf_backward))

    # masked_l1 w.r.t. the stacked per-class outputs; resample anything
    # close to the |.| kink so the finite differences stay valid
    def l1_inputs(rng):
        masks, _ = _random_masks(rng, 1, 3, 4, 4)
        while True:
            outs = rng.normal(size=(1, 3, 3, 4, 4))
            real = rng.normal(size=(1, 3, 4, 4))
            diffs = np.stack([real * masks[:, i : i + 1] - outs[:, i] for i in range(3)])
            if np.abs(diffs).min() > 1e-2:
                return {"outs": outs, "real": real, "masks": masks}

    entries.append(OpCheck(
        "masked_l1",
        l1_inputs,
        lambda inp: np.asarray(losses.masked_l1(
            inp["real"], [inp["outs"][:, i] for i in range(3)], inp["masks"])),
        lambda inp, dy: {"outs": np.stack(losses.masked_l1_backward(
            inp["real"], [inp["outs"][:, i] for i in range(3)], inp["masks"]), axis=1) * dy},
    ))

    # patch discriminators w.r.t. the image half of the concatenated input
    for name, seg_ch in (("disc_semantic", 3), ("disc_image", 3)):
        disc = make_discriminator(seg_ch + 3, rng0, dtype=np.float64)

        def d_forward(inp, _d=disc):
            return _d.forward(np.concatenate([inp["guide"], inp["image"]], axis=1))[0]

        def d_backward(inp, dy, _d=disc, _c=seg_ch):
            _d.zero_grads()
            _, caches = _d.forward(np.concatenate([inp["guide"], inp["image"]], axis=1))
            dx = _d.backward(caches, dy)
            return {"image": dx[:, _c:]}

        entries.append(OpCheck(
            name,
            lambda rng, _c=seg_ch: {"guide": rng.normal(size=(1, _c, 8, 8)),
                                    "image": rng.normal(size=(1, 3, 8, 8))},
            d_forward,
            d_backward,
        ))

    # GAN losses w.r.t. logits (hinge has kinks at -1/+1; keep clear of them)
    def logits_clear_of(rng, kinks):
        x = rng.normal(size=(1, 1, 3, 3)) * 2
        while min(float(np.abs(x - kk).min()) for kk in kinks) < 1e-2:
            x = rng.normal(size=(1, 1, 3, 3)) * 2
        return x

    for kind in ("logistic", "hinge"):
        kinks_r, kinks_f = ((1.0,), (-1.0,)) if kind == "hinge" else ((), ())
        entries.append(OpCheck(
            f"gan_{kind}_d",
            lambda rng, _kr=kinks_r, _kf=kinks_f: {
                "real": logits_clear_of(rng, _kr) if _kr else rng.normal(size=(1, 1, 3, 3)) * 2,
                "fake": logits_clear_of(rng, _kf) if _kf else rng.normal(size=(1, 1, 3, 3)) * 2},
            lambda inp, _k=kind: np.asarray(losses.gan_d_loss(inp["real"], inp["fake"], _k)[0]),
            lambda inp, dy, _k=kind: dict(zip(
                ("real", "fake"),
                [g * dy for g in losses.gan_d_loss(inp["real"], inp["fake"], _k)[1:]])),
        ))
        entries.append(OpCheck(
            f"gan_{kind}_g",
            lambda rng, _kf=kinks_f: {
                "fake": logits_clear_of(rng, _kf) if _kf else rng.normal(size=(1, 1, 3, 3)) * 2},
            lambda inp, _k=kind: np.asarray(losses.gan_g_loss(inp["fake"], _k)[0]),
            lambda inp, dy, _k=kind: {"fake": losses.gan_g_loss(inp["fake"], _k)[1] * dy},
        ))

    return entries
