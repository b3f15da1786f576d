"""Training: corruption, losses, optimizers, deconfounding, loops."""

from .confound import ConfoundEncoder
from .corruption import MppCorruption, corrupt_sequence, mpp_loss
from .loop import (
    TrainResult,
    evaluate_regression,
    predict_rows,
    pretrain_mpp,
    train,
)
from .losses import mae, mean_predictor_baseline, regression_loss, subject_mae
from .optim import Optimizer, OptimizerConfig, learning_rate_at
from .runconfig import (
    RunConfig,
    load_run_config,
    load_synth_spec,
    resolve_run_config,
    write_snapshot,
)

__all__ = [
    "ConfoundEncoder",
    "MppCorruption",
    "Optimizer",
    "OptimizerConfig",
    "RunConfig",
    "TrainResult",
    "corrupt_sequence",
    "evaluate_regression",
    "learning_rate_at",
    "load_run_config",
    "load_synth_spec",
    "mae",
    "mean_predictor_baseline",
    "mpp_loss",
    "predict_rows",
    "pretrain_mpp",
    "regression_loss",
    "resolve_run_config",
    "subject_mae",
    "train",
    "write_snapshot",
]
