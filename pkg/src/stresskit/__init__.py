"""Stress detection from wearable-derived feature streams with missing data."""

__version__ = "0.1.0"

from .classifiers import ClassifierSpec, TrainedModel, fit, load_model, save_model  # noqa: E402
from .data_model import (  # noqa: E402
    DatasetSplit,
    FeatureManifest,
    HourInstance,
    MinuteDataset,
    explode_to_minutes,
    hourly_dataset,
    hourly_vector,
    load_dataset,
    save_dataset,
)
from .synth_gen import GenConfig, generate  # noqa: E402

__all__ = [
    "__version__", "ClassifierSpec", "TrainedModel", "fit", "load_model", "save_model",
    "DatasetSplit", "FeatureManifest", "HourInstance", "MinuteDataset", "explode_to_minutes",
    "hourly_dataset", "hourly_vector", "load_dataset", "save_dataset", "GenConfig", "generate",
]
