"""Regression loss and reported metrics."""

import numpy as np

from .. import autodiff as ad
from ..errors import DataError


def regression_loss(pred, target) -> ad.Array:
    """MSE between predictions and targets (the optimization objective)."""
    target = np.asarray(target.data if isinstance(target, ad.Array) else target)
    pred = ad.as_array(pred)
    if pred.data.shape != target.shape:
        pred = ad.reshape(pred, target.shape)
    return ad.mse(pred, target)


def mae(preds, targets) -> float:
    """Mean absolute error, in label units (weeks)."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if preds.size == 0 or preds.shape != targets.shape:
        raise DataError(f"mae needs equal non-empty lengths, got {preds.shape} vs {targets.shape}")
    return float(np.abs(preds - targets).mean())


def subject_mae(preds, targets, subjects) -> float:
    """MAE after averaging hemisphere predictions per subject."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    order: dict[str, int] = {}
    sums: list[float] = []
    counts: list[int] = []
    labels: list[float] = []
    for pred, target, subject in zip(preds, targets, subjects, strict=True):
        if subject not in order:
            order[subject] = len(sums)
            sums.append(0.0)
            counts.append(0)
            labels.append(target)
        sums[order[subject]] += pred
        counts[order[subject]] += 1
    averaged = np.array(sums) / np.array(counts)
    return mae(averaged, np.array(labels))


def mean_predictor_baseline(train_targets, eval_targets) -> float:
    """MAE of always predicting the training-set mean."""
    train_targets = np.asarray(train_targets, dtype=np.float64)
    eval_targets = np.asarray(eval_targets, dtype=np.float64)
    if train_targets.size == 0 or eval_targets.size == 0:
        raise DataError("baseline needs non-empty target sets")
    return float(np.abs(eval_targets - train_targets.mean()).mean())
