"""
Recommender package: fusion, scoring tower, loss, training and inference.
"""
from .model import (
    EPSILON,
    RecommenderError,
    fuse,
    score,
    loss,
    ScoringTower,
    TmerModel,
    PathIndex,
)
from .training import (
    TrainConfig,
    TrainingData,
    TrainingDiverged,
    sample_negatives,
    build_training_data,
    batch_loss,
    train,
    save_checkpoint,
    load_checkpoint,
)
from .inference import Recommender

__all__ = [
    'EPSILON',
    'RecommenderError',
    'fuse',
    'score',
    'loss',
    'ScoringTower',
    'TmerModel',
    'PathIndex',
    'TrainConfig',
    'TrainingData',
    'TrainingDiverged',
    'sample_negatives',
    'build_training_data',
    'batch_loss',
    'train',
    'save_checkpoint',
    'load_checkpoint',
    'Recommender',
]
