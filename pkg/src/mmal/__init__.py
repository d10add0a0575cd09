"""Budgeted multi-modal active learning with a learned label-request policy."""

__version__ = "0.1.0"

from .datagen import Dataset, GeneratorConfig, MultiModalWindow, SubjectSession, generate
from .errors import ConfigurationError, ContractViolationError
from .fusion import ClassifierEnsemble, EnsembleOutput, confidence, majority_vote
from .models import QNetwork, SequenceClassifier
from .personalize import Metrics, PersonalizationResult, compute_metrics, personalize_subject
from .policy import PolicyState, ReplayMemory, RewardSpec, Transition, build_state, reward
from .trainer import EpisodeLog, TrainConfig, run_baseline, run_mmql

__all__ = [
    "ClassifierEnsemble",
    "ConfigurationError",
    "ContractViolationError",
    "Dataset",
    "EnsembleOutput",
    "EpisodeLog",
    "GeneratorConfig",
    "Metrics",
    "MultiModalWindow",
    "PersonalizationResult",
    "PolicyState",
    "QNetwork",
    "ReplayMemory",
    "RewardSpec",
    "SequenceClassifier",
    "SubjectSession",
    "TrainConfig",
    "Transition",
    "build_state",
    "compute_metrics",
    "confidence",
    "generate",
    "majority_vote",
    "personalize_subject",
    "reward",
    "run_baseline",
    "run_mmql",
]
