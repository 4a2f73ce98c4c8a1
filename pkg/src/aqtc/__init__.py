"""Question-aware grounding and multi-step answer inference over pre-encoded instructional videos."""

from .data import (Candidate, Dataset, FunctionClip, QuestionSample, Step, SyntheticConfig, generate_synthetic,
                   load_dataset, pool_sequence, split_train_val, write_dataset)
from .evaluation import ensemble_predict, evaluate, recall_at_k
from .model import GroundingConfig, ModelParams, forward_question
from .training import TrainConfig, pseudo_label, train, train_with_ssl

__version__ = "0.1.0"

__all__ = [
    "Candidate", "Dataset", "FunctionClip", "QuestionSample", "Step", "SyntheticConfig", "generate_synthetic",
    "load_dataset", "pool_sequence", "split_train_val", "write_dataset", "ensemble_predict", "evaluate",
    "recall_at_k", "GroundingConfig", "ModelParams", "forward_question", "TrainConfig", "pseudo_label", "train",
    "train_with_ssl",
]
