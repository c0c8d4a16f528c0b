"""Semi-supervised federated speech emotion recognition on utterance features."""

from .augment import AugmentConfig, sfa, strong_view, weak_view
from .config import ExperimentConfig, load_config
from .data import FeatureRecord, SynthSpec, make_folds, synth_generate
from .experiment import ExperimentReport, run_experiment
from .federated import RunHistory, TrainConfig, run_training
from .metrics import uar
from .nn import ModelParams, init_model
from .pseudolabel import PlConfig

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "ExperimentConfig",
    "ExperimentReport",
    "FeatureRecord",
    "ModelParams",
    "PlConfig",
    "RunHistory",
    "SynthSpec",
    "TrainConfig",
    "init_model",
    "load_config",
    "make_folds",
    "run_experiment",
    "run_training",
    "sfa",
    "strong_view",
    "synth_generate",
    "uar",
    "weak_view",
]
