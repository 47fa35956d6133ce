"""Training data generation and the neural-network CV regressor."""
from .data import (
    SCHEMAS,
    GenerationSpec,
    TrainingSet,
    closest_window,
    generate_training_set,
    lhs_sample,
)
from .mlp import (
    MLPModel,
    TrainConfig,
    TrainingDiverged,
    predict_cvs,
    predict_cvs_batch,
    r2_scores,
    train,
)

__all__ = [
    "SCHEMAS",
    "GenerationSpec",
    "MLPModel",
    "TrainConfig",
    "TrainingDiverged",
    "TrainingSet",
    "closest_window",
    "generate_training_set",
    "lhs_sample",
    "predict_cvs",
    "predict_cvs_batch",
    "r2_scores",
    "train",
]
