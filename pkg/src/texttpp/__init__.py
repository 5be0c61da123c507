"""Transformer temporal point processes over textual event types."""

__version__ = "0.1.0"

from .backbone import Backbone, BackboneConfig, LoRAConfig
from .config import HyperParams, RunConfig, load_config
from .core import (
    Dataset,
    Event,
    EventSequence,
    EventType,
    dataset_stats,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .estimator import TPPEstimator, check_dataset
from .exceptions import DataError, NumericalError, SequenceTooLongError
from .heads import LossWeights
from .model import ModelConfig, TPPModel, load_checkpoint, save_checkpoint
from .synth import HawkesParams, simulate_dataset
from .tpp import MCConfig, sequence_log_likelihood
from .train import Metrics, TrainConfig, evaluate, train_loop

__all__ = [
    "Backbone",
    "BackboneConfig",
    "DataError",
    "Dataset",
    "Event",
    "EventSequence",
    "EventType",
    "HawkesParams",
    "HyperParams",
    "LoRAConfig",
    "LossWeights",
    "MCConfig",
    "Metrics",
    "ModelConfig",
    "NumericalError",
    "RunConfig",
    "SequenceTooLongError",
    "TPPEstimator",
    "TPPModel",
    "TrainConfig",
    "check_dataset",
    "dataset_stats",
    "evaluate",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "save_checkpoint",
    "save_dataset",
    "sequence_log_likelihood",
    "simulate_dataset",
    "split_dataset",
    "train_loop",
]
