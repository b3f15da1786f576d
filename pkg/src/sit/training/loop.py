"""Training loops: supervised regression and masked-patch pretraining.

Both loops share the same skeleton: shuffle train rows each epoch, run
mini-batch forward/backward under one Tape, take an optimizer step, then
evaluate on the validation split and append one CSV row (epoch, train_loss,
val_mae, lr, wall_seconds). The checkpoint with the best validation metric
is kept. For pretraining the val_mae column carries the masked
reconstruction MSE (same header, documented).

All randomness flows from one seeded generator in a fixed draw order, so a
seed pins the whole run. An optional max_seconds budget stops cleanly at an
epoch boundary (used for time-boxed runs; the metric log says how far it
got).
"""

import csv
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..autodiff import save_checkpoint
from ..errors import ConfigError, NumericError
from ..data.dataset import LoadedData, LoadedSplit
from ..model import SiTModel, assemble_sequence, forward_mpp, forward_regress, project_patches
from .confound import ConfoundEncoder
from .corruption import MppCorruption, corrupt_sequence, mpp_loss
from .losses import regression_loss, subject_mae
from .optim import Optimizer, OptimizerConfig

LOG_HEADER = ("epoch", "train_loss", "val_mae", "lr", "wall_seconds")


@dataclass
class TrainResult:
    best_val_metric: float
    best_epoch: int
    epochs_run: int
    wall_seconds: float
    checkpoint_path: Path | None
    log_rows: list[tuple]
    stopped_early: bool = False


def _batch_slices(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield np.s_[start : min(start + batch_size, n)]


def _require_split(data: LoadedData, name: str) -> LoadedSplit:
    if name not in data.splits or data.splits[name].n_rows == 0:
        raise ConfigError(f"training requires a non-empty {name!r} split")
    return data.splits[name]


def _append_log(path: Path | None, row: tuple, first: bool):
    if path is None:
        return
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if first:
            writer.writerow(LOG_HEADER)
        writer.writerow(row)


def _checkpoint(path, model: SiTModel, confound: ConfoundEncoder | None, extra_config: dict):
    tensors = dict(model.params)
    if confound is not None:
        tensors.update(confound.state_tensors())
    config = {"model": model.config.to_dict(), **extra_config}
    save_checkpoint(path, tensors, config)


def predict_rows(model: SiTModel, tokens: np.ndarray, scan_ages=None,
                 confound: ConfoundEncoder | None = None, batch_size: int = 64) -> np.ndarray:
    """Eval-mode predictions for [n, N, P] tokens; returns [n] floats."""
    preds = np.empty(tokens.shape[0], dtype=np.float64)
    for sl in _batch_slices(tokens.shape[0], batch_size):
        extras = None
        if confound is not None:
            if scan_ages is None:
                raise ConfigError("deconfounded model needs scan ages at prediction time")
            extras = [confound.encode(np.asarray(scan_ages)[sl], training=False)]
        out = forward_regress(tokens[sl], model, extra_tokens=extras, training=False)
        preds[sl] = np.asarray(out.data, dtype=np.float64)
    return preds


def evaluate_regression(model: SiTModel, split: LoadedSplit, task: str,
                        confound: ConfoundEncoder | None = None,
                        batch_size: int = 64) -> tuple[np.ndarray, float]:
    """(row predictions, subject-level MAE) on a split."""
    preds = predict_rows(model, split.tokens, split.scan_ages, confound, batch_size)
    return preds, subject_mae(preds, split.targets(task), split.subjects)


def train(data: LoadedData, model: SiTModel, opt_config: OptimizerConfig, *,
          task: str = "pma", seed: int = 0, deconfound: bool = False,
          confound: ConfoundEncoder | None = None, freeze_backbone: bool = False,
          out_dir=None, max_seconds: float | None = None,
          eval_batch_size: int = 64, checkpoint_extra: dict | None = None) -> TrainResult:
    """Supervised phenotype regression; returns best-val result + artifacts."""
    if task not in ("pma", "ga"):
        raise ConfigError(f"task must be pma or ga, got {task!r}")
    if deconfound and task != "ga":
        raise ConfigError("deconfounding uses scan age as covariate; only valid for task=ga")
    train_split = _require_split(data, "train")
    val_split = _require_split(data, "val")

    if deconfound and confound is None:
        confound = ConfoundEncoder(model.config.hidden, seed=seed, dtype=model.dtype)
    if not deconfound:
        confound = None

    if freeze_backbone:
        model.set_trainable(lambda name: name.startswith("head."))
        if confound is not None:
            confound.weight.requires_grad = False
            confound.bias.requires_grad = False

    params = dict(model.params)
    if confound is not None:
        params.update(confound.params)

    targets = train_split.targets(task).astype(model.dtype)
    # A still-zero output bias (fresh or MPP-initialized head) starts at the
    # train-target mean, so early epochs fit structure, not the output scale.
    out_bias = model.params["head.fc2.b"]
    if not out_bias.data.any():
        out_bias.data[...] = targets.mean()
    steps_per_epoch = (train_split.n_rows + opt_config.batch_size - 1) // opt_config.batch_size
    optimizer = Optimizer(params, opt_config, steps_per_epoch)
    rng = np.random.default_rng(seed)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = ckpt_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.csv"
        log_path.unlink(missing_ok=True)
        ckpt_path = out_dir / "best.ckpt"

    extra_config = {
        "task": task,
        "deconfound": deconfound,
        "seed": seed,
        "norm": data.stats.to_lists(),
        "channels": list(data.channels),
        **(checkpoint_extra or {}),
    }

    start = time.perf_counter()
    best = np.inf
    best_epoch = -1
    rows: list[tuple] = []
    stopped = False
    epochs_run = 0
    for epoch in range(opt_config.epochs):
        order = rng.permutation(train_split.n_rows)
        losses = []
        lr = 0.0
        for sl in _batch_slices(train_split.n_rows, opt_config.batch_size):
            idx = order[sl]
            batch = train_split.tokens[idx]
            with ad.Tape() as tape:
                extras = None
                if confound is not None:
                    extras = [confound.encode(train_split.scan_ages[idx], training=True)]
                pred = forward_regress(batch, model, extra_tokens=extras, training=True, rng=rng)
                loss = regression_loss(pred, targets[idx])
                if not np.isfinite(loss.data):
                    raise NumericError(f"non-finite training loss at epoch {epoch}")
                tape.backward(loss)
            lr = optimizer.step()
            for p in params.values():
                p.grad = None
            losses.append(float(loss.data))
        epochs_run = epoch + 1

        _, val_mae = evaluate_regression(model, val_split, task, confound, eval_batch_size)
        wall = time.perf_counter() - start
        row = (epoch, float(np.mean(losses)), val_mae, lr, wall)
        rows.append(row)
        _append_log(log_path, row, first=epoch == 0)
        if val_mae < best:
            best = val_mae
            best_epoch = epoch
            if ckpt_path is not None:
                _checkpoint(ckpt_path, model, confound, extra_config)
        if max_seconds is not None and time.perf_counter() - start > max_seconds:
            stopped = epochs_run < opt_config.epochs
            break

    return TrainResult(
        best_val_metric=best, best_epoch=best_epoch, epochs_run=epochs_run,
        wall_seconds=time.perf_counter() - start, checkpoint_path=ckpt_path,
        log_rows=rows, stopped_early=stopped,
    )


def _mpp_val_loss(model: SiTModel, split: LoadedSplit, corruption: MppCorruption,
                  seed: int, batch_size: int) -> float:
    """Masked-reconstruction MSE with a fixed corruption stream per call."""
    rng = np.random.default_rng((seed ^ 0xA5A5A5) & 0x7FFFFFFF)
    total_sq = 0.0
    total_count = 0
    for sl in _batch_slices(split.n_rows, batch_size):
        batch = split.tokens[sl]
        embedded, _ = project_patches(batch, model)
        corrupted, mask = corrupt_sequence(embedded, model.params["mask_token"], corruption, rng)
        x = assemble_sequence(corrupted, model)
        recon = forward_mpp(x, model, training=False)
        if not mask.any():
            continue
        diff = (recon.data - batch) * mask[..., None]
        total_sq += float((diff.astype(np.float64) ** 2).sum())
        total_count += int(mask.sum()) * batch.shape[-1]
    if total_count == 0:
        raise NumericError("validation corruption masked nothing; increase mask_prob or rows")
    return total_sq / total_count


def pretrain_mpp(data: LoadedData, model: SiTModel, opt_config: OptimizerConfig,
                 corruption: MppCorruption, *, seed: int = 0, out_dir=None,
                 max_seconds: float | None = None, eval_batch_size: int = 64,
                 checkpoint_extra: dict | None = None) -> TrainResult:
    """Masked-patch-prediction pretraining; best checkpoint by val loss."""
    train_split = _require_split(data, "train")
    val_split = _require_split(data, "val")

    steps_per_epoch = (train_split.n_rows + opt_config.batch_size - 1) // opt_config.batch_size
    optimizer = Optimizer(dict(model.params), opt_config, steps_per_epoch)
    rng = np.random.default_rng(seed)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = ckpt_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "metrics.csv"
        log_path.unlink(missing_ok=True)
        ckpt_path = out_dir / "best.ckpt"

    extra_config = {
        "task": "mpp",
        "deconfound": False,
        "seed": seed,
        "mask_prob": corruption.mask_prob,
        "norm": data.stats.to_lists(),
        "channels": list(data.channels),
        **(checkpoint_extra or {}),
    }

    start = time.perf_counter()
    best = np.inf
    best_epoch = -1
    rows: list[tuple] = []
    stopped = False
    epochs_run = 0
    for epoch in range(opt_config.epochs):
        order = rng.permutation(train_split.n_rows)
        losses = []
        lr = 0.0
        for sl in _batch_slices(train_split.n_rows, opt_config.batch_size):
            batch = train_split.tokens[order[sl]]
            with ad.Tape() as tape:
                embedded, _ = project_patches(batch, model)
                corrupted, mask = corrupt_sequence(
                    embedded, model.params["mask_token"], corruption, rng
                )
                x = assemble_sequence(corrupted, model)
                recon = forward_mpp(x, model, training=True, rng=rng)
                loss = mpp_loss(recon, batch, mask)
                if not np.isfinite(loss.data):
                    raise NumericError(f"non-finite pretraining loss at epoch {epoch}")
                tape.backward(loss)
            lr = optimizer.step()
            model.zero_grad()
            losses.append(float(loss.data))
        epochs_run = epoch + 1

        val_loss = _mpp_val_loss(model, val_split, corruption, seed, eval_batch_size)
        wall = time.perf_counter() - start
        row = (epoch, float(np.mean(losses)), val_loss, lr, wall)
        rows.append(row)
        _append_log(log_path, row, first=epoch == 0)
        if val_loss < best:
            best = val_loss
            best_epoch = epoch
            if ckpt_path is not None:
                _checkpoint(ckpt_path, model, None, extra_config)
        if max_seconds is not None and time.perf_counter() - start > max_seconds:
            stopped = epochs_run < opt_config.epochs
            break

    return TrainResult(
        best_val_metric=best, best_epoch=best_epoch, epochs_run=epochs_run,
        wall_seconds=time.perf_counter() - start, checkpoint_path=ckpt_path,
        log_rows=rows, stopped_early=stopped,
    )
