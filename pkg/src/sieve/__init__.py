"""Learned per-feature noise maps and feature suppression for prediction privacy."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, precision
from .checkpoint import (
    BadMagicError,
    CheckpointError,
    TruncatedFileError,
    VersionMismatchError,
    load_checkpoint,
    read_arrays,
    save_checkpoint,
    write_arrays,
)
from .config import Config, ConfigError, parse_config
from .data import (
    IdxFormatError,
    LabeledDataset,
    derive_binary_labels,
    generate_biased,
    generate_two_attribute,
    load_idx,
    load_mnist_fixture,
    save_idx,
    split_disjoint,
)
from .evaluation import (
    AdversaryReport,
    BlackBoxConfig,
    BlackBoxReport,
    EvalReport,
    FairnessReport,
    SweepConfig,
    SweepPoint,
    adversary_eval,
    blackbox_workflow,
    evaluate_accuracy_stochastic,
    fairness_eval,
    fairness_metrics,
    privacy_accuracy_sweep,
    write_csv,
)
from .estimators import Classifier, Sieve
from .infotheory import MiEstimate, estimate_entropy_kl, estimate_mi_ksg, mi_loss_percent, mi_upper_bound
from .nn import Model, TrainConfig, build_model, predict, train_classifier
from .noise_map import NoiseMap, NoiseTrainConfig, reparameterize_sigma, sample_noise, sieve_loss, train_noise_map
from .suppression import SiftPlan, SuppressionConfig, build_plan, sift, threshold_mask, train_suppression_values

__all__ = [name for name in dir() if not name.startswith("_")]
