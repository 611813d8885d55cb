"""Volumes, preprocessing and the synthetic case generator.

``micformer.data.manifest`` (dataset directories) is imported explicitly since it
depends on :mod:`micformer.io`.
"""

from .preprocess import PadSpec, crop_to_original, normalize_intensity, pad_to_divisible
from .split import DatasetSplit, make_split
from .synth import histogram_classifier_accuracy, synth_case, synth_cases
from .volumes import UNIT_SPACING, CasePair, LabelMap, Modality, Volume

__all__ = [
    "CasePair",
    "DatasetSplit",
    "LabelMap",
    "Modality",
    "PadSpec",
    "UNIT_SPACING",
    "Volume",
    "crop_to_original",
    "histogram_classifier_accuracy",
    "make_split",
    "normalize_intensity",
    "pad_to_divisible",
    "synth_case",
    "synth_cases",
]
