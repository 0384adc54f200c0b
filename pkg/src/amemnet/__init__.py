"""Memory-augmented adversarial early action prediction on precomputed feature vectors."""
from .data import (FeatureDataset, SynthConfig, generate_synthetic, load_dataset, load_model,
                   save_dataset, save_model)
from .estimator import AMemNetClassifier, LinearHeadClassifier
from .evalfuse import ScoreTable, evaluate_by_ratio, fuse_streams
from .model import AMemNet, Architecture
from .training import TrainConfig, TrainReport, fit, train

__version__ = "0.1.0"

__all__ = [
    "AMemNet", "AMemNetClassifier", "Architecture", "FeatureDataset", "LinearHeadClassifier",
    "ScoreTable", "SynthConfig", "TrainConfig", "TrainReport", "evaluate_by_ratio",
    "fuse_streams", "generate_synthetic", "load_dataset", "load_model", "save_dataset",
    "save_model", "train", "fit",
]
