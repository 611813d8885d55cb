"""Desk-scale dual-stream multimodal segmentation toolkit."""

from . import analysis, config, contracts, core, data, io, metrics, model, nn, training

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "analysis",
    "config",
    "contracts",
    "core",
    "data",
    "io",
    "metrics",
    "model",
    "nn",
    "training",
]
