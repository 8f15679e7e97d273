"""Finite-difference certification of hand-written backward passes.

Every differentiable operation in the package registers a check here: a
seeded input builder, the forward, and the backward. ``run_registry``
sweeps them all and reports the worst relative error per input, which the
``gradcheck`` CLI subcommand turns into a CSV and an exit code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ops
from . import sau as sau_mod
from .rng import derive_seed, make_rng

DEFAULT_TOL = 1e-4
DEFAULT_STEP = 1e-5


def finite_diff(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar-valued fn at x.

    Per-element step is step*(1+|x_i|). fn must be deterministic; a
    non-finite value raises.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        h = step * (1.0 + abs(orig))
        flat[i] = orig + h
        fp = float(fn(x))
        flat[i] = orig - h
        fm = float(fn(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("non-finite function value during finite differencing")
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a-g| / max(|a|, |g|, 1e-8); stable near zero gradients."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float((np.abs(analytic - numeric) / denom).max())


@dataclass
class OpCheck:
    """One registered op: seeded inputs, forward, and backward.

    forward maps the input dict to an output tensor; backward maps
    (inputs, upstream) to gradients for every differentiable input (keys
    must match the input dict).
    """

    name: str
    make_inputs: Callable[[np.random.Generator], dict[str, np.ndarray]]
    forward: Callable[[dict], np.ndarray]
    backward: Callable[[dict, np.ndarray], dict[str, np.ndarray]]


@dataclass
class GradReport:
    op: str
    tol: float = DEFAULT_TOL
    rel_err: dict[str, float] = field(default_factory=dict)
    abs_err: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.rel_err.values())

    def rows(self):
        """(op, input, max_rel_err, pass) tuples for the CSV report."""
        return [(self.op, k, self.rel_err[k], self.rel_err[k] <= self.tol)
                for k in self.rel_err]


def check_op(check: OpCheck, rng: np.random.Generator, tol: float = DEFAULT_TOL,
             step: float = DEFAULT_STEP) -> GradReport:
    """Compare the registered backward against central finite differences."""
    inputs = check.make_inputs(rng)
    y = check.forward(inputs)
    upstream = rng.normal(size=y.shape)
    grads = check.backward(inputs, upstream)
    report = GradReport(op=check.name, tol=tol)
    for name, analytic in grads.items():
        if analytic.shape != inputs[name].shape:
            raise ValueError(f"{check.name}: gradient shape {analytic.shape} != "
                             f"input {name} shape {inputs[name].shape}")

        def scalar_fn(arr, _name=name):
            probe = dict(inputs)
            probe[_name] = arr
            return float(np.sum(check.forward(probe) * upstream))

        numeric = finite_diff(scalar_fn, inputs[name], step)
        report.rel_err[name] = rel_error(analytic, numeric)
        report.abs_err[name] = float(np.abs(analytic - numeric).max())
    return report


def run_registry(names: list[str] | None = None, seed: int = 0,
                 tol: float = DEFAULT_TOL) -> list[GradReport]:
    """Run all (or the named subset of) registered checks, one seeded rng each."""
    registry = {c.name: c for c in build_registry()}
    if names is None:
        selected = list(registry.values())
    else:
        missing = [n for n in names if n not in registry]
        if missing:
            raise KeyError(f"unregistered op(s): {', '.join(missing)}")
        selected = [registry[n] for n in names]
    return [check_op(c, make_rng(derive_seed(seed, 1000 + i)), tol=tol)
            for i, c in enumerate(selected)]


# ---------------------------------------------------------------------------
# Registered checks


def _away_from_kinks(rng, shape, margin=1e-3):
    # relu-family gradients are undefined at 0; resample until clear of it
    x = rng.normal(size=shape)
    while np.abs(x).min() < margin:
        x = rng.normal(size=shape)
    return x


def _ops_checks() -> list[OpCheck]:
    checks = []

    spec_c = ops.ConvSpec(3, 4, 3, 3, stride=1, padding=1)
    checks.append(OpCheck(
        "conv2d",
        lambda rng: {"x": rng.normal(size=(2, 3, 5, 4)),
                     "w": rng.normal(size=(4, 3, 3, 3)),
                     "b": rng.normal(size=4)},
        lambda inp: ops.conv2d(inp["x"], inp["w"], inp["b"], spec_c),
        lambda inp, dy: dict(zip(("x", "w", "b"), ops.conv2d_backward(inp["x"], inp["w"], spec_c, dy))),
    ))

    spec_s2 = ops.ConvSpec(2, 3, 3, 3, stride=2, padding=1, has_bias=False)
    checks.append(OpCheck(
        "conv2d_stride2",
        lambda rng: {"x": rng.normal(size=(1, 2, 6, 5)),
                     "w": rng.normal(size=(3, 2, 3, 3))},
        lambda inp: ops.conv2d(inp["x"], inp["w"], None, spec_s2),
        lambda inp, dy: dict(zip(("x", "w"), ops.conv2d_backward(inp["x"], inp["w"], spec_s2, dy)[:2])),
    ))

    spec_t = ops.ConvSpec(3, 2, 3, 3, stride=2, padding=1)
    checks.append(OpCheck(
        "transpose_conv2d",
        lambda rng: {"x": rng.normal(size=(1, 3, 3, 4)),
                     "w": rng.normal(size=(3, 2, 3, 3)),
                     "b": rng.normal(size=2)},
        lambda inp: ops.transpose_conv2d(inp["x"], inp["w"], inp["b"], spec_t),
        lambda inp, dy: dict(zip(("x", "w", "b"),
                                 ops.transpose_conv2d_backward(inp["x"], inp["w"], spec_t, dy))),
    ))

    checks.append(OpCheck(
        "instance_norm",
        lambda rng: {"x": rng.normal(size=(2, 3, 4, 5)),
                     "gamma": rng.normal(size=3),
                     "beta": rng.normal(size=3)},
        lambda inp: ops.instance_norm(inp["x"], inp["gamma"], inp["beta"]),
        lambda inp, dy: dict(zip(("x", "gamma", "beta"),
                                 ops.instance_norm_backward(inp["x"], inp["gamma"], 1e-5, dy))),
    ))

    checks.append(OpCheck(
        "relu",
        lambda rng: {"x": _away_from_kinks(rng, (2, 3, 4, 4))},
        lambda inp: ops.relu(inp["x"]),
        lambda inp, dy: {"x": ops.relu_backward(inp["x"], dy)},
    ))

    checks.append(OpCheck(
        "leaky_relu",
        lambda rng: {"x": _away_from_kinks(rng, (2, 3, 4, 4))},
        lambda inp: ops.leaky_relu(inp["x"], 0.2),
        lambda inp, dy: {"x": ops.leaky_relu_backward(inp["x"], 0.2, dy)},
    ))

    for op_name, grad in (("add", lambda inp, dy: {"a": dy, "b": dy}),
                          ("sub", lambda inp, dy: {"a": dy, "b": -dy}),
                          ("mul", lambda inp, dy: {"a": dy * inp["b"], "b": dy * inp["a"]})):
        checks.append(OpCheck(
            f"elementwise_{op_name}",
            lambda rng: {"a": rng.normal(size=(2, 2, 3, 3)), "b": rng.normal(size=(2, 2, 3, 3))},
            lambda inp, _op=op_name: ops.elementwise(_op, inp["a"], inp["b"]),
            grad,
        ))

    checks.append(OpCheck(
        "channel_softmax",
        lambda rng: {"x": rng.normal(size=(1, 4, 2, 2))},
        lambda inp: ops.channel_softmax(inp["x"]),
        lambda inp, dy: {"x": ops.channel_softmax_backward(ops.channel_softmax(inp["x"]), dy)},
    ))

    checks.append(OpCheck(
        "pixel_shuffle",
        lambda rng: {"x": rng.normal(size=(1, 8, 3, 2))},
        lambda inp: ops.pixel_shuffle(inp["x"], 2),
        lambda inp, dy: {"x": ops.pixel_shuffle_backward(dy, 2)},
    ))

    checks.append(OpCheck(
        "nearest_upsample",
        lambda rng: {"x": rng.normal(size=(1, 3, 3, 3))},
        lambda inp: ops.nearest_upsample(inp["x"], 2),
        lambda inp, dy: {"x": ops.nearest_upsample_backward(dy, 2)},
    ))

    checks.append(OpCheck(
        "unfold",
        lambda rng: {"x": rng.normal(size=(1, 2, 4, 3))},
        lambda inp: ops.unfold(inp["x"], 3),
        lambda inp, dy: {"x": ops.unfold_backward(dy, inp["x"].shape, 3)},
    ))

    checks.append(OpCheck(
        "bilinear_upsample",
        lambda rng: {"x": rng.normal(size=(1, 2, 4, 3))},
        lambda inp: ops.bilinear_upsample(inp["x"], 2),
        lambda inp, dy: {"x": ops.bilinear_upsample_backward(dy, inp["x"].shape, 2)},
    ))

    checks.append(OpCheck(
        "bicubic_upsample",
        lambda rng: {"x": rng.normal(size=(1, 2, 4, 3))},
        lambda inp: ops.bicubic_upsample(inp["x"], 2),
        lambda inp, dy: {"x": ops.bicubic_upsample_backward(dy, inp["x"].shape, 2)},
    ))

    checks.append(OpCheck(
        "nearest_resize",
        lambda rng: {"x": rng.normal(size=(1, 2, 5, 4))},
        lambda inp: ops.nearest_resize(inp["x"], 3, 6),
        lambda inp, dy: {"x": ops.nearest_resize_backward(dy, inp["x"].shape)},
    ))

    return checks


def _sau_case(rng, cfg):
    params = sau_mod.init_sau_params(cfg, rng, dtype=np.float64)
    return {
        "f": rng.normal(size=(1, cfg.channels, 3, 3)),
        "compress_w": params.compress_w, "compress_b": params.compress_b,
        "kernelgen_w": params.kernelgen_w, "kernelgen_b": params.kernelgen_b,
    }


def _params_of(inp):
    return sau_mod.SauParams(inp["compress_w"], inp["compress_b"],
                             inp["kernelgen_w"], inp["kernelgen_b"])


def _sau_checks() -> list[OpCheck]:
    cfg = sau_mod.SauConfig(channels=2, compressed=2, k=3, s=2)

    def sakg_backward(inp, dy):
        f_n, f_c = sau_mod._sakg_forward_ctx(inp["f"], _params_of(inp), cfg)
        ctx = sau_mod.SauContext(cfg=cfg, params=_params_of(inp), f=inp["f"], f_c=f_c, f_n=f_n)
        d_f, d_p = sau_mod.sakg_backward(ctx, dy)
        return {"f": d_f, "compress_w": d_p.compress_w, "compress_b": d_p.compress_b,
                "kernelgen_w": d_p.kernelgen_w, "kernelgen_b": d_p.kernelgen_b}

    def safu_inputs(rng):
        f = rng.normal(size=(1, 2, 3, 3))
        logits = rng.normal(size=(1, cfg.k * cfg.k, 6, 6))
        return {"f": f, "field_logits": logits}

    def full_backward(inp, dy):
        out, ctx = sau_mod.sau_forward_ctx(inp["f"], _params_of(inp), cfg)
        d_f, d_p = sau_mod.sau_backward(ctx, dy)
        return {"f": d_f, "compress_w": d_p.compress_w, "compress_b": d_p.compress_b,
                "kernelgen_w": d_p.kernelgen_w, "kernelgen_b": d_p.kernelgen_b}

    return [
        OpCheck(
            "sakg_forward",
            lambda rng: _sau_case(rng, cfg),
            lambda inp: sau_mod.sakg_forward(inp["f"], _params_of(inp), cfg),
            sakg_backward,
        ),
        OpCheck(
            # field entries pass through a softmax so the checked surface is
            # smooth and the simplex constraint is respected
            "safu_forward",
            safu_inputs,
            lambda inp: sau_mod.safu_forward(
                inp["f"], ops.channel_softmax(inp["field_logits"]), cfg),
            lambda inp, dy: (lambda fn: {
                "f": sau_mod.safu_backward(inp["f"], fn, cfg, dy)[0],
                "field_logits": ops.channel_softmax_backward(
                    fn, sau_mod.safu_backward(inp["f"], fn, cfg, dy)[1]),
            })(ops.channel_softmax(inp["field_logits"])),
        ),
        OpCheck(
            "sau_forward",
            lambda rng: _sau_case(rng, cfg),
            lambda inp: sau_mod.sau_forward(inp["f"], _params_of(inp), cfg),
            full_backward,
        ),
    ]


def build_registry() -> list[OpCheck]:
    """All registered checks: primitives, both upsampler branches, and the
    GAN building blocks."""
    from . import model

    return _ops_checks() + _sau_checks() + model.gradcheck_entries(OpCheck)
