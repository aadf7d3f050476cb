"""LiDAR segment classification at desk scale.

Pipeline: point clouds are projected to polar range images, oversegmented by
region growing, auto-labeled by physical size rules, cropped into fixed-size
samples, and fed to a small from-scratch CNN. The network is pretrained on the
rule labels and fine-tuned on a few manual annotations, with or without frozen
convolution layers. A ray-casting simulator supplies labeled corpora.
"""

from .errors import ConfigError, DataError, NumericAbort
from .labels import FINE_CLASSES, RULE_CLASSES, UNLABELED

__all__ = [
    "ConfigError",
    "DataError",
    "NumericAbort",
    "FINE_CLASSES",
    "RULE_CLASSES",
    "UNLABELED",
]

__version__ = "0.1.0"
