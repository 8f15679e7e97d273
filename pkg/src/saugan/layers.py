"""Parameter-holding layer wrappers over the functional ops.

Layers keep weights and same-shape gradient accumulators; ``forward``
returns (output, cache) and ``backward`` consumes that cache, adds to the
layer's gradient buffers, and returns the input gradient. There is no
tape: composites chain these calls explicitly in reverse.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .ops import ConvSpec


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _register(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError


def conv_weight(rng, shape, gain=1.0, dtype=np.float32):
    fan_in = int(np.prod(shape[1:]))
    return (rng.normal(size=shape) * (gain / np.sqrt(fan_in))).astype(dtype)


class Conv2d(Layer):
    def __init__(self, spec: ConvSpec, rng, gain: float = 1.0, dtype=np.float32):
        super().__init__()
        self.spec = spec
        self._register("w", conv_weight(
            rng, (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w), gain, dtype))
        if spec.has_bias:
            self._register("b", np.zeros(spec.out_channels, dtype=dtype))

    def forward(self, x):
        return ops.conv2d(x, self.params["w"], self.params.get("b"), self.spec), x

    def backward(self, cache, dy):
        dx, dw, db = ops.conv2d_backward(cache, self.params["w"], self.spec, dy)
        self.grads["w"] += dw
        if db is not None:
            self.grads["b"] += db
        return dx


class TransposeConv2d(Layer):
    def __init__(self, spec: ConvSpec, rng, gain: float = 1.0, dtype=np.float32):
        super().__init__()
        self.spec = spec
        self._register("w", conv_weight(
            rng, (spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w), gain, dtype))
        if spec.has_bias:
            self._register("b", np.zeros(spec.out_channels, dtype=dtype))

    def forward(self, x):
        return ops.transpose_conv2d(x, self.params["w"], self.params.get("b"), self.spec), x

    def backward(self, cache, dy):
        dx, dw, db = ops.transpose_conv2d_backward(cache, self.params["w"], self.spec, dy)
        self.grads["w"] += dw
        if db is not None:
            self.grads["b"] += db
        return dx


class InstanceNorm(Layer):
    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.eps = eps
        self._register("gamma", np.ones(channels, dtype=dtype))
        self._register("beta", np.zeros(channels, dtype=dtype))

    def forward(self, x):
        return ops.instance_norm(x, self.params["gamma"], self.params["beta"], self.eps), x

    def backward(self, cache, dy):
        dx, dgamma, dbeta = ops.instance_norm_backward(cache, self.params["gamma"], self.eps, dy)
        self.grads["gamma"] += dgamma
        self.grads["beta"] += dbeta
        return dx


class ReLU(Layer):
    def forward(self, x):
        return ops.relu(x), x

    def backward(self, cache, dy):
        return ops.relu_backward(cache, dy)


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        return ops.leaky_relu(x, self.slope), x

    def backward(self, cache, dy):
        return ops.leaky_relu_backward(cache, self.slope, dy)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = layers

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dy):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy = layer.backward(cache, dy)
        return dy

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def named_params(self, prefix: str):
        out = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Sequential):
                out.update(layer.named_params(f"{prefix}.{i}"))
            else:
                for k, v in layer.params.items():
                    out[f"{prefix}.{i}.{k}"] = (layer, k)
        return out


class Linear(Layer):
    """Shared fully connected map applied along the last axis."""

    def __init__(self, in_features: int, out_features: int, rng, dtype=np.float32):
        super().__init__()
        self._register("w", (rng.normal(size=(out_features, in_features))
                             / np.sqrt(in_features)).astype(dtype))
        self._register("b", np.zeros(out_features, dtype=dtype))

    def forward(self, x):
        return x @ self.params["w"].T + self.params["b"], x

    def backward(self, cache, dy):
        x = cache
        self.grads["w"] += np.tensordot(dy, x, axes=(list(range(x.ndim - 1)),) * 2)
        self.grads["b"] += dy.reshape(-1, dy.shape[-1]).sum(axis=0)
        return dy @ self.params["w"]
