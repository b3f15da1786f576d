"""Scan-age deconfounding: batch-normalized scalar projected to a token.

The confound (scan age, weeks) is normalized with batch statistics during
training (running statistics updated with momentum 0.1) and with the running
statistics at eval, then mapped through a learnable linear 1 -> D. The
resulting D-vector is appended to the sequence as an extra, position-less
token.
"""

import numpy as np

from .. import autodiff as ad
from ..errors import DataError

_BN_EPS = 1e-5
_BN_MOMENTUM = 0.1


class ConfoundEncoder:
    def __init__(self, hidden: int, seed: int = 0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.hidden = hidden
        self.dtype = np.dtype(dtype)
        weight = (rng.standard_normal(hidden) * 0.02).astype(self.dtype)
        self.weight = ad.Array(weight, requires_grad=True, name="confound.weight")
        self.bias = ad.Array(np.zeros(hidden, dtype=self.dtype), requires_grad=True,
                             name="confound.bias")
        self.running_mean = 0.0
        self.running_var = 1.0

    @property
    def params(self) -> dict:
        return {"confound.weight": self.weight, "confound.bias": self.bias}

    def encode(self, values, training: bool) -> ad.Array:
        """Confound scalars [B] -> extra tokens [B, 1, D]."""
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size == 0:
            raise DataError("confound batch is empty")
        if not np.isfinite(values).all():
            raise DataError("confound values contain NaN/Inf")
        if training:
            mean = values.mean()
            var = values.var()  # biased, matches the normalization below
            self.running_mean = (1 - _BN_MOMENTUM) * self.running_mean + _BN_MOMENTUM * mean
            self.running_var = (1 - _BN_MOMENTUM) * self.running_var + _BN_MOMENTUM * var
        else:
            mean, var = self.running_mean, self.running_var
        normed = ((values - mean) / np.sqrt(var + _BN_EPS)).astype(self.dtype)

        token = ad.scale(
            ad.reshape(self.weight, (1, 1, self.hidden)), normed[:, None, None]
        )
        return ad.add(token, ad.reshape(self.bias, (1, 1, self.hidden)))

    def state_tensors(self) -> dict:
        """Learnables plus running stats, for checkpointing."""
        stats = np.array([self.running_mean, self.running_var], dtype=np.float32)
        return {**self.params, "confound.running_stats": stats}

    def load_state(self, tensors: dict):
        for attr, name in (("weight", "confound.weight"), ("bias", "confound.bias")):
            if name not in tensors:
                raise DataError(f"checkpoint lacks {name}")
            data = np.asarray(tensors[name], dtype=self.dtype)
            if data.shape != (self.hidden,):
                raise DataError(f"{name} shape {data.shape} != ({self.hidden},)")
            getattr(self, attr).data = data
        stats = tensors.get("confound.running_stats")
        if stats is None or np.asarray(stats).shape != (2,):
            raise DataError("checkpoint lacks confound.running_stats [2]")
        self.running_mean = float(stats[0])
        self.running_var = float(stats[1])
