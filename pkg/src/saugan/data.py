"""Procedural paired (semantic layout, rendered image) data.

Layouts are layered random rectangles and ellipses over a background
class, with shape classes drawn from a deliberately imbalanced prior
(class i weighted (i+1)^-exponent) so rare classes cover few pixels.
Targets are rendered from a per-class palette of distinct base colors
plus a deterministic sinusoidal texture, which keeps the task learnable:
a nearest-palette-color lookup recovers the layout from a clean render.

Everything is a pure function of (spec, seed); per-sample seeds are
seed XOR index so shards can be regenerated independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import stns
from .rng import derive_seed, make_rng

# reserved stream offset for palette sampling, outside any sample index
_PALETTE_STREAM = 0xFFFFFFFF00000000

MIN_COLOR_DIST = 0.2


@dataclass(frozen=True)
class SceneSpec:
    size: int = 32
    n_classes: int = 5
    shapes_min: int = 3
    shapes_max: int = 8
    imbalance_exponent: float = 1.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.size < 16:
            raise ValueError("size must be >= 16")
        if not 0 <= self.shapes_min <= self.shapes_max:
            raise ValueError("bad shapes-per-image range")


@dataclass(frozen=True)
class Palette:
    """Per-class base color plus a sinusoidal texture descriptor."""

    colors: np.ndarray  # (n_classes, 3) in [0,1]
    tex_freq: np.ndarray  # cycles across the image
    tex_orient: np.ndarray  # radians
    tex_amp: np.ndarray  # added luminance amplitude

    def __post_init__(self) -> None:
        n = self.colors.shape[0]
        for i in range(n):
            for j in range(i + 1, n):
                d = float(np.linalg.norm(self.colors[i] - self.colors[j]))
                if d < MIN_COLOR_DIST:
                    raise ValueError(f"palette colors {i} and {j} too close ({d:.3f})")


@dataclass(frozen=True)
class SemanticLayout:
    """Per-pixel class labels plus the valid-class indicator vector."""

    labels: np.ndarray  # (H, W) int64 in [0, n_classes)
    valid: np.ndarray  # (n_classes,) uint8; 1 iff the class occurs

    @classmethod
    def from_labels(cls, labels: np.ndarray, n_classes: int) -> "SemanticLayout":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ValueError("labels out of range")
        valid = np.zeros(n_classes, dtype=np.uint8)
        valid[np.unique(labels)] = 1
        return cls(labels=labels, valid=valid)

    @property
    def n_classes(self) -> int:
        return int(self.valid.shape[0])


def make_palette(n_classes: int, rng: np.random.Generator, amp: float = 0.05) -> Palette:
    """Rejection-sample distinct class colors (margin above MIN_COLOR_DIST)."""
    colors = np.empty((n_classes, 3))
    i = 0
    while i < n_classes:
        cand = rng.uniform(0.05, 0.95, size=3)
        if all(np.linalg.norm(cand - colors[j]) >= MIN_COLOR_DIST + 0.05 for j in range(i)):
            colors[i] = cand
            i += 1
    return Palette(
        colors=colors,
        tex_freq=rng.uniform(2.0, 5.0, size=n_classes),
        tex_orient=rng.uniform(0.0, np.pi, size=n_classes),
        tex_amp=np.full(n_classes, amp),
    )


def palette_pair(spec: SceneSpec) -> tuple[Palette, Palette]:
    """The (target view, conditional view) palettes for a dataset."""
    rng = make_rng(derive_seed(spec.seed, _PALETTE_STREAM))
    return make_palette(spec.n_classes, rng), make_palette(spec.n_classes, rng)


def gen_layout(spec: SceneSpec, rng: np.random.Generator) -> SemanticLayout:
    """Background class 0 with layered random shapes on top."""
    size = spec.size
    labels = np.zeros((size, size), dtype=np.int64)
    n_shapes = int(rng.integers(spec.shapes_min, spec.shapes_max + 1))
    if spec.n_classes > 1:
        weights = np.array([(i + 1.0) ** -spec.imbalance_exponent
                            for i in range(1, spec.n_classes)])
        weights /= weights.sum()
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(n_shapes):
        cls = 1 + int(rng.choice(spec.n_classes - 1, p=weights))
        cy, cx = rng.uniform(0, size, size=2)
        hy, hx = rng.uniform(size / 10, size / 3, size=2)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
        else:
            mask = ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 <= 1.0
        labels[mask] = cls
    return SemanticLayout.from_labels(labels, spec.n_classes)


def render_target(layout: SemanticLayout, palette: Palette, view: str = "G") -> np.ndarray:
    """Render a layout to a (1,3,H,W) float32 image in [0,1].

    View "A" shifts the texture phase horizontally by a quarter image so a
    second palette plus this view gives a distinct but aligned rendering.
    """
    if view not in ("G", "A"):
        raise ValueError(f"view must be 'G' or 'A', got {view!r}")
    labels = layout.labels
    h, w = labels.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if view == "A":
        xx = xx + w / 4.0
    base = palette.colors[labels]  # (H, W, 3)
    phase = (xx * np.cos(palette.tex_orient[labels])
             + yy * np.sin(palette.tex_orient[labels]))
    tex = palette.tex_amp[labels] * np.sin(2.0 * np.pi * palette.tex_freq[labels] * phase / h)
    img = base.transpose(2, 0, 1) + tex[None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)[None]


def classify_by_palette(image: np.ndarray, palette: Palette) -> np.ndarray:
    """Nearest-palette-color label map of a (1,3,H,W) or (3,H,W) image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 4:
        img = img[0]
    dist = ((img[None] - palette.colors[:, :, None, None]) ** 2).sum(axis=1)
    return dist.argmin(axis=0)


def to_onehot(layout: SemanticLayout, dtype=np.float32) -> np.ndarray:
    """One-hot class masks of shape (n_classes, H, W); per-pixel sum is 1."""
    n = layout.n_classes
    h, w = layout.labels.shape
    masks = np.zeros((n, h, w), dtype=dtype)
    masks.reshape(n, -1)[layout.labels.ravel(), np.arange(h * w)] = 1
    return masks


@dataclass(frozen=True)
class Sample:
    index: int
    layout: SemanticLayout
    target: np.ndarray  # (1,3,H,W) float32, view G
    cond: np.ndarray | None = None  # (1,3,H,W) float32, view A


def gen_sample(spec: SceneSpec, index: int, with_cond: bool = False) -> Sample:
    pal_g, pal_a = palette_pair(spec)
    layout = gen_layout(spec, make_rng(derive_seed(spec.seed, index)))
    return Sample(
        index=index,
        layout=layout,
        target=render_target(layout, pal_g, view="G"),
        cond=render_target(layout, pal_a, view="A") if with_cond else None,
    )


def dataset_iter(spec: SceneSpec, count: int, start: int = 0,
                 with_cond: bool = False) -> Iterator[Sample]:
    for index in range(start, start + count):
        yield gen_sample(spec, index, with_cond=with_cond)


# ---------------------------------------------------------------------------
# Sample archives


def save_sample(path, sample: Sample, spec: SceneSpec) -> None:
    tensors = {
        "labels": sample.layout.labels.astype(np.float32),
        "target": sample.target,
    }
    if sample.cond is not None:
        tensors["cond"] = sample.cond
    stns.write_archive(path, tensors, {
        "kind": "sample",
        "index": str(sample.index),
        "n_classes": str(spec.n_classes),
        "seed": str(spec.seed),
    })


def load_sample(path) -> Sample:
    tensors, manifest = stns.read_archive(path)
    if manifest.get("kind") != "sample":
        raise stns.StnsFormatError(f"{path} is not a sample archive")
    n_classes = int(manifest["n_classes"])
    layout = SemanticLayout.from_labels(tensors["labels"].astype(np.int64), n_classes)
    return Sample(
        index=int(manifest.get("index", "0")),
        layout=layout,
        target=tensors["target"],
        cond=tensors.get("cond"),
    )


def parse_scene_spec(text: str) -> SceneSpec:
    """SceneSpec from key=value lines (same format as run configs)."""
    import dataclasses

    fields = {f.name: f for f in dataclasses.fields(SceneSpec)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"line {lineno}: unknown scene key {key!r}")
        typ = fields[key].type
        values[key] = float(raw) if typ in ("float", float) else int(raw)
    return SceneSpec(**values)
