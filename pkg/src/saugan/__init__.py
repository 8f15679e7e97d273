"""Semantic-aware feature upsampling and a local/global GAN composition.

Pure-numpy NCHW tensor ops with hand-written, finite-difference-certified
backward passes; the SAU operator with a nested-loop oracle; a desk-scale
GAN trainer over procedural semantic-layout data; and one CLI
(``saugan``) for verification, benchmarking, data generation, training,
and inference.
"""

from .config import RunConfig
from .sau import SauConfig, SauParams, safu_forward, sakg_forward, sau_forward, sau_naive

__all__ = [
    "RunConfig",
    "SauConfig",
    "SauParams",
    "sakg_forward",
    "safu_forward",
    "sau_forward",
    "sau_naive",
]

__version__ = "0.1.0"
