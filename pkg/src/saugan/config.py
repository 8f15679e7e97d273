"""Run configuration: a dataclass with a line-based key=value file form.

Unknown keys are rejected. The same format is used for training configs
and data-generation specs (see data.SceneSpec for the latter's keys).
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

MODES = ("synthesis", "crossview")
FUSIONS = ("add", "conv")
UPSAMPLERS = ("nearest", "bilinear", "bicubic", "deconv", "pixelshuffle", "sau")
GAN_LOSSES = ("logistic", "hinge")


@dataclass
class RunConfig:
    n_classes: int = 5
    image_size: int = 32
    k: int = 5
    s: int = 2
    c_compressed: int = 16
    base_channels: int = 32
    local_channels: int = 16
    lambda_l1: float = 10.0
    lambda_ce: float = 1.0
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    mode: str = "synthesis"
    fusion: str = "add"
    upsampler: str = "sau"
    gan_loss: str = "logistic"
    use_local: bool = True
    use_weight_map: bool = True
    steps: int = 600
    batch_size: int = 4
    checkpoint_interval: int = 200
    imbalance_exponent: float = 1.5

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if self.upsampler not in UPSAMPLERS:
            raise ValueError(f"upsampler must be one of {UPSAMPLERS}, got {self.upsampler!r}")
        if self.gan_loss not in GAN_LOSSES:
            raise ValueError(f"gan_loss must be one of {GAN_LOSSES}")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.image_size % (2 * self.s) != 0:
            raise ValueError("image_size must be divisible by 2*s")
        if self.k % 2 != 1 or self.s < 1:
            raise ValueError("k must be odd and s >= 1")
        if not 1 <= self.c_compressed <= self.base_channels:
            raise ValueError("c_compressed must be in [1, base_channels]")


def _convert(field: dataclasses.Field, raw: str):
    if field.type in ("bool", bool):
        low = raw.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ValueError(f"bad boolean for {field.name}: {raw!r}")
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse key=value lines (# comments allowed) into a RunConfig."""
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    values = dataclasses.asdict(base) if base is not None else {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _convert(fields[key], raw)
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    lines = [f"{f.name}={getattr(cfg, f.name)}" for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


def config_hash(cfg: RunConfig) -> str:
    """Stable short fingerprint of a configuration."""
    return hashlib.sha256(format_config(cfg).encode("utf-8")).hexdigest()[:12]


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base=base)
