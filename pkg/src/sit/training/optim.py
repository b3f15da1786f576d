"""SGD and Adam with linear warm-up and optional cosine decay.

Learning rate: linear ramp from 0 to lr over warmup_epochs * steps_per_epoch
optimizer steps, then constant ("none") or half-cosine to 0 ("cosine") over
the remaining steps. Gradients must be finite; a non-finite gradient aborts
with the offending tensor named.
"""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, NumericError

_ADAM_B1 = 0.9
_ADAM_B2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "sgd"  # "sgd" | "adam"
    lr: float = 1e-4
    warmup_epochs: float = 0.0
    scheduler: str = "none"  # "none" | "cosine"
    batch_size: int = 32
    epochs: int = 1

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"optimizer kind must be sgd or adam, got {self.kind!r}")
        if self.scheduler not in ("none", "cosine"):
            raise ConfigError(f"scheduler must be none or cosine, got {self.scheduler!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.warmup_epochs < 0:
            raise ConfigError(f"warmup_epochs must be >= 0, got {self.warmup_epochs}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.warmup_epochs > self.epochs:
            raise ConfigError(
                f"warmup_epochs {self.warmup_epochs} exceeds total epochs {self.epochs}"
            )


def learning_rate_at(config: OptimizerConfig, step: int, steps_per_epoch: int) -> float:
    """lr for optimizer step `step` (0-based). Piecewise linear then decay."""
    warm_steps = config.warmup_epochs * steps_per_epoch
    if warm_steps > 0 and step < warm_steps:
        return config.lr * step / warm_steps
    if config.scheduler == "none":
        return config.lr
    total = config.epochs * steps_per_epoch
    span = max(total - warm_steps, 1)
    progress = min(max((step - warm_steps) / span, 0.0), 1.0)
    return config.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class Optimizer:
    """Applies updates in-place to a named parameter dict of Arrays."""

    def __init__(self, params: dict, config: OptimizerConfig, steps_per_epoch: int):
        if steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1 (empty training split?)")
        self.params = params
        self.config = config
        self.steps_per_epoch = steps_per_epoch
        self.step_count = 0
        if config.kind == "adam":
            self._m = {}
            self._v = {}
            self._t = {}

    def step(self) -> float:
        """One update over all trainable params with gradients; returns lr."""
        lr = learning_rate_at(self.config, self.step_count, self.steps_per_epoch)
        for name, p in self.params.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            if not np.isfinite(g).all():
                raise NumericError(f"non-finite gradient in tensor {name!r} at step {self.step_count}")
            if self.config.kind == "sgd":
                p.data -= lr * g
            else:
                m = self._m.get(name)
                if m is None:
                    m = self._m[name] = np.zeros_like(p.data)
                    self._v[name] = np.zeros_like(p.data)
                    self._t[name] = 0
                v = self._v[name]
                self._t[name] += 1
                t = self._t[name]
                m *= _ADAM_B1
                m += (1.0 - _ADAM_B1) * g
                v *= _ADAM_B2
                v += (1.0 - _ADAM_B2) * g * g
                m_hat = m / (1.0 - _ADAM_B1**t)
                v_hat = v / (1.0 - _ADAM_B2**t)
                p.data -= lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        self.step_count += 1
        return lr
