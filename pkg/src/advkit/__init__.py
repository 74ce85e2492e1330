"""Adversarial-robustness toolkit: attacks, defenses, and evaluation
for small convolutional classifiers, on a self-contained numpy
autodiff engine.

The headline piece is a black-box attack that needs only a right/wrong
answer from the classifier: it searches along the data manifold learned
by an autoencoder, minimizing pixel-space distance while maximizing
reconstruction-space distance.  White-box baselines (Carlini L2, FGSM,
BIM), a detector/reformer defense, adversarial training, and a
deterministic evaluation harness round out the pipeline.
"""

from .attacks import (
    AdvResult,
    AttackConfig,
    bim,
    box_transform,
    carlini_attack,
    fgsm,
    l2_distance,
    manigen_attack,
    manigen_encoder_variant,
    manigen_objective,
)
from .autodiff import LOG_EPS, Tensor, no_grad
from .config import RunConfig, build_run_config
from .data import DatasetSplit, load_cifar_bin, load_dataset, load_idx, resplit, scale
from .defenses import (
    DefenseVerdict,
    MagnetDefense,
    adversarial_training,
    detector_score,
    magnet_build,
    magnet_predict,
)
from .errors import (
    AdvkitError,
    ConfigError,
    FormatError,
    NumericError,
    ShapeError,
    StateError,
)
from .evaluation import (
    EvalReport,
    run_experiment,
    test_accuracy_defended,
    test_accuracy_plain,
)
from .imaging import export_grid, write_png
from .models import (
    ModelSpec,
    Oracle,
    TrainConfig,
    TrainedModel,
    build_autoencoder,
    build_classifier,
    default_train_config,
    label_oracle,
    train,
)
from .optim import SGD, Adadelta, Adam, make_optimizer
from .weights import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "AdvResult",
    "AdvkitError",
    "Adadelta",
    "Adam",
    "AttackConfig",
    "ConfigError",
    "DatasetSplit",
    "DefenseVerdict",
    "EvalReport",
    "FormatError",
    "LOG_EPS",
    "MagnetDefense",
    "ModelSpec",
    "NumericError",
    "Oracle",
    "RunConfig",
    "SGD",
    "ShapeError",
    "StateError",
    "Tensor",
    "TrainConfig",
    "TrainedModel",
    "adversarial_training",
    "bim",
    "box_transform",
    "build_autoencoder",
    "build_classifier",
    "build_run_config",
    "carlini_attack",
    "default_train_config",
    "detector_score",
    "export_grid",
    "fgsm",
    "l2_distance",
    "label_oracle",
    "load_cifar_bin",
    "load_dataset",
    "load_idx",
    "load_weights",
    "magnet_build",
    "magnet_predict",
    "make_optimizer",
    "manigen_attack",
    "manigen_encoder_variant",
    "manigen_objective",
    "no_grad",
    "resplit",
    "run_experiment",
    "save_weights",
    "scale",
    "test_accuracy_defended",
    "test_accuracy_plain",
    "train",
    "write_png",
]
