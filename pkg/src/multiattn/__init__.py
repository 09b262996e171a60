"""Multi-attention GRU classifiers for harassment and harassment-type detection in tweets."""
from .model import CATEGORIES, LabelVector, Model, ModelConfig, ScoreVector, VariantId, build, decide, load, save
from .training import MetricsReport, TrainConfig, evaluate, run_protocol, train

__version__ = "0.1.0"

__all__ = [
    "CATEGORIES", "LabelVector", "Model", "ModelConfig", "ScoreVector", "VariantId", "build", "decide", "load",
    "save", "MetricsReport", "TrainConfig", "evaluate", "run_protocol", "train",
]
