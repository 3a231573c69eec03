"""Workplace location choice: nested logit and neural network models.

Synthetic city and population generation, nested logit estimation with
standard errors, a zone-block neural network with per-zone constants,
and the comparison statistics used to put the two side by side.
"""

__version__ = "0.1.0"

from .core import Dataset, Individual, Zone, build_dataset, split_dataset
from .nested_logit import NestedLogitModel, NlParams, estimate_nl
from .neural import FeatureSpec, NeuralModel, TrainConfig, train

__all__ = [
    "Dataset",
    "FeatureSpec",
    "Individual",
    "NestedLogitModel",
    "NeuralModel",
    "NlParams",
    "TrainConfig",
    "Zone",
    "build_dataset",
    "estimate_nl",
    "split_dataset",
    "train",
]
