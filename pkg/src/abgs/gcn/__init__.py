"""Graph-network edge scorer: features, model, training."""

from .features import EDGE_COLUMNS, NODE_COLUMNS, FeatureStats, GraphFeatures, extract_features
from .model import (
    GcnModel,
    ModelConfig,
    ModelFormatError,
    backward,
    forward,
    infer,
    init_model,
    load_model,
    mse_loss,
    normalized_adjacency,
    predict,
    save_model,
)
from .train import Adam, TrainConfig, TrainHistory, TrainingError, evaluate_loss, train

__all__ = [
    "EDGE_COLUMNS", "NODE_COLUMNS", "FeatureStats", "GraphFeatures", "extract_features",
    "GcnModel", "ModelConfig", "ModelFormatError", "backward", "forward", "infer", "init_model", "load_model",
    "mse_loss", "normalized_adjacency", "predict", "save_model",
    "Adam", "TrainConfig", "TrainHistory", "TrainingError", "evaluate_loss", "train",
]
