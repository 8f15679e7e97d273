"""Alternating GAN training with Adam, plus checkpointing and evaluation.

Each step runs one discriminator update (on a fresh generator forward)
followed by one generator update against the refreshed discriminator.
Gradients are zeroed between the two phases. Everything is float32 and
seeded, so a run is a pure function of its config: two runs with the same
config produce bitwise-identical loss logs.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from . import losses
from .config import RunConfig, config_hash, parse_config
from .data import SceneSpec, classify_by_palette, gen_sample, palette_pair, to_onehot
from .model import LocalGlobalGan
from .stns import read_archive, write_archive

HELDOUT_START = 1 << 20  # sample indices reserved for evaluation

CSV_HEADER = "step,gan_g,gan_d_s,gan_d_i,l1_local,ce_class,total_g,total_d"


@dataclass
class LossReport:
    step: int
    gan_g: float
    gan_d_s: float
    gan_d_i: float | None
    l1_local: float
    ce_class: float
    total_g: float
    total_d: float

    def csv_row(self) -> str:
        def fmt(v):
            return "" if v is None else str(np.float32(v))

        return ",".join([str(self.step)] + [fmt(v) for v in (
            self.gan_g, self.gan_d_s, self.gan_d_i, self.l1_local,
            self.ce_class, self.total_g, self.total_d)])


def adam_update(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
                t: int, lr: float, beta1: float, beta2: float, eps: float = 1e-8) -> None:
    """Bias-corrected moment update, in place on (param, m, v)."""
    one = param.dtype.type(1.0)
    b1 = param.dtype.type(beta1)
    b2 = param.dtype.type(beta2)
    m *= b1
    m += (one - b1) * grad
    v *= b2
    v += (one - b2) * grad * grad
    mhat = m / (one - b1 ** t)
    vhat = v / (one - b2 ** t)
    param -= param.dtype.type(lr) * mhat / (np.sqrt(vhat) + param.dtype.type(eps))


class Adam:
    def __init__(self, index, lr: float, beta1: float = 0.5, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.index = index  # name -> (layer, key)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(layer.params[key]) for k, (layer, key) in index.items()}
        self.v = {k: np.zeros_like(layer.params[key]) for k, (layer, key) in index.items()}

    def step(self) -> None:
        self.t += 1
        for name, (layer, key) in self.index.items():
            adam_update(layer.params[key], layer.grads[key], self.m[name], self.v[name],
                        self.t, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grads(self) -> None:
        for layer, key in self.index.values():
            layer.grads[key][...] = 0


def scene_spec_of(cfg: RunConfig) -> SceneSpec:
    return SceneSpec(size=cfg.image_size, n_classes=cfg.n_classes,
                     imbalance_exponent=cfg.imbalance_exponent, seed=cfg.seed)


def get_batch(cfg: RunConfig, spec: SceneSpec, step: int):
    """Deterministic batch for one step: (onehot, real, cond|None, valid)."""
    crossview = cfg.mode == "crossview"
    samples = [gen_sample(spec, step * cfg.batch_size + i, with_cond=crossview)
               for i in range(cfg.batch_size)]
    onehot = np.stack([to_onehot(s.layout) for s in samples]).astype(np.float32)
    real = np.concatenate([s.target for s in samples], axis=0)
    cond = np.concatenate([s.cond for s in samples], axis=0) if crossview else None
    valid = np.stack([s.layout.valid for s in samples]).astype(np.float32)
    return onehot, real, cond, valid


def _zero(index) -> None:
    for layer, key in index.values():
        layer.grads[key][...] = 0


def train_step(model: LocalGlobalGan, opt_g: Adam, opt_d: Adam, batch, step: int) -> LossReport:
    cfg = model.cfg
    onehot, real, cond, valid = batch
    g_index, d_index = opt_g.index, opt_d.index

    fw = model.gen.forward(onehot, cond)
    fake = fw.image

    # discriminator phase (fake treated as a constant)
    _zero(d_index)
    lr_s, c_rs = model.disc_semantic(real, onehot)
    lf_s, c_fs = model.disc_semantic(fake, onehot)
    d_s_loss, d_lr, d_lf = losses.gan_d_loss(lr_s, lf_s, cfg.gan_loss)
    model.d_s.backward(c_rs, d_lr)
    model.d_s.backward(c_fs, d_lf)
    d_i_loss = None
    if cfg.mode == "crossview":
        lr_i, c_ri = model.disc_image(real, cond)
        lf_i, c_fi = model.disc_image(fake, cond)
        d_i_loss, d_lri, d_lfi = losses.gan_d_loss(lr_i, lf_i, cfg.gan_loss)
        model.d_i.backward(c_ri, d_lri)
        model.d_i.backward(c_fi, d_lfi)
    opt_d.step()

    # generator phase against the refreshed discriminator
    _zero(g_index)
    _zero(d_index)
    lf2, c_f2 = model.disc_semantic(fake, onehot)
    gan_g, d_logits = losses.gan_g_loss(lf2, cfg.gan_loss)
    d_fake = model.d_s.backward(c_f2, d_logits)[:, cfg.n_classes :]
    if cfg.mode == "crossview":
        lf2_i, c_f2i = model.disc_image(fake, cond)
        gan_g_i, d_logits_i = losses.gan_g_loss(lf2_i, cfg.gan_loss)
        gan_g += gan_g_i
        d_fake = d_fake + model.d_i.backward(c_f2i, d_logits_i)[:, 3:]

    l1 = ce = 0.0
    d_outs = None
    d_cls = None
    if cfg.use_local:
        l1 = losses.masked_l1(real, fw.class_outs, fw.masks)
        d_outs = [np.float32(cfg.lambda_l1) * g for g in
                  losses.masked_l1_backward(real, fw.class_outs, fw.masks)]
        ce, d_ce = losses.class_ce(fw.logits, valid)
        if cfg.lambda_ce != 0.0:
            d_cls = np.float32(cfg.lambda_ce) * d_ce
    model.gen.backward(fw, d_fake, d_outs, d_cls)
    opt_g.step()
    _zero(d_index)  # drop discriminator gradients leaked during the G pass

    total_g = gan_g + cfg.lambda_l1 * l1 + cfg.lambda_ce * ce
    total_d = d_s_loss + (d_i_loss or 0.0)
    report = LossReport(step=step, gan_g=gan_g, gan_d_s=d_s_loss, gan_d_i=d_i_loss,
                        l1_local=l1, ce_class=ce, total_g=total_g, total_d=total_d)
    terms = [gan_g, d_s_loss, l1, ce] + ([d_i_loss] if d_i_loss is not None else [])
    if not all(np.isfinite(t) for t in terms):
        raise RuntimeError(f"non-finite loss at step {step}: {report}")
    return report


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(path, model: LocalGlobalGan, step: int) -> None:
    manifest = {"kind": "checkpoint", "format_version": "1", "step": str(step),
                "config_hash": config_hash(model.cfg), "mode": model.cfg.mode}
    for f in dataclasses.fields(RunConfig):
        manifest[f"cfg_{f.name}"] = str(getattr(model.cfg, f.name))
    write_archive(path, model.all_slots(), manifest)


def load_checkpoint(path) -> tuple[LocalGlobalGan, int]:
    tensors, manifest = read_archive(path)
    if manifest.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a checkpoint archive")
    cfg_text = "\n".join(f"{k[4:]}={v}" for k, v in manifest.items() if k.startswith("cfg_"))
    cfg = parse_config(cfg_text)
    if manifest.get("config_hash") not in ("", None, config_hash(cfg)):
        raise ValueError("checkpoint config hash does not match its stored config")
    model = LocalGlobalGan(cfg)
    model.load_slots(tensors)
    return model, int(manifest.get("step", "0"))


# ---------------------------------------------------------------------------
# Full runs


@dataclass
class TrainResult:
    reports: list[LossReport]
    csv_text: str
    checkpoint_path: str | None
    wall_seconds: float
    model: LocalGlobalGan | None = None

    def l1_series(self) -> list[float]:
        return [r.l1_local for r in self.reports]

    def l1_moving_average(self, upto_step: int, window: int = 10) -> float:
        vals = [r.l1_local for r in self.reports if r.step <= upto_step][-window:]
        return float(np.mean(vals))

    def final_l1(self, window: int = 10) -> float:
        return float(np.mean([r.l1_local for r in self.reports[-window:]]))


def run_training(cfg: RunConfig, out_dir=None, steps: int | None = None,
                 on_report=None) -> TrainResult:
    """Train from scratch; optionally write losses.csv and checkpoints."""
    import os

    steps = cfg.steps if steps is None else steps
    spec = scene_spec_of(cfg)
    model = LocalGlobalGan(cfg)
    opt_g = Adam(model.generator_index(), cfg.lr, cfg.beta1, cfg.beta2)
    opt_d = Adam(model.discriminator_index(), cfg.lr, cfg.beta1, cfg.beta2)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    lines = ["# schema=1", CSV_HEADER]
    reports = []
    t0 = time.perf_counter()
    ckpt_path = None
    for step in range(1, steps + 1):
        batch = get_batch(cfg, spec, step - 1)
        report = train_step(model, opt_g, opt_d, batch, step)
        reports.append(report)
        lines.append(report.csv_row())
        if on_report is not None:
            on_report(report)
        if out_dir is not None and cfg.checkpoint_interval > 0 and step % cfg.checkpoint_interval == 0:
            save_checkpoint(os.path.join(out_dir, f"ckpt_{step:06d}.stns"), model, step)
    wall = time.perf_counter() - t0

    csv_text = "\n".join(lines) + "\n"
    if out_dir is not None:
        with open(os.path.join(out_dir, "losses.csv"), "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        ckpt_path = os.path.join(out_dir, "ckpt_final.stns")
        save_checkpoint(ckpt_path, model, steps)
    return TrainResult(reports=reports, csv_text=csv_text, checkpoint_path=ckpt_path,
                       wall_seconds=wall, model=model)


def generate_image(model: LocalGlobalGan, onehot: np.ndarray,
                   cond: np.ndarray | None = None) -> np.ndarray:
    """Fused generator output, clamped to [0,1]."""
    fw = model.gen.forward(onehot, cond)
    return np.clip(fw.image, 0.0, 1.0)


def evaluate_palette_accuracy(model: LocalGlobalGan, count: int = 64,
                              start: int = HELDOUT_START) -> float:
    """Nearest-palette-color pixel accuracy of generated images against
    their input layouts, over held-out procedural samples."""
    cfg = model.cfg
    spec = scene_spec_of(cfg)
    pal_g, _ = palette_pair(spec)
    crossview = cfg.mode == "crossview"
    correct = total = 0
    for i in range(count):
        sample = gen_sample(spec, start + i, with_cond=crossview)
        onehot = to_onehot(sample.layout).astype(np.float32)[None]
        img = generate_image(model, onehot, sample.cond if crossview else None)
        pred = classify_by_palette(img, pal_g)
        correct += int((pred == sample.layout.labels).sum())
        total += pred.size
    return correct / total
