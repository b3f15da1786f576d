"""Masked-patch corruption for self-supervised pretraining.

Corruption happens in embedding space, after the patch projection and before
positional embeddings are added. Each position is independently corrupted
with probability mask_prob; a corrupted position is replaced by the
learnable mask token (80%), by another position's embedding drawn uniformly
from the other N-1 positions (10%), or kept as is (10%). The returned mask
marks every corrupted position, "keep" ones included, and is what the MPP
loss averages over.

The whole transform is composed from differentiable primitives, so gradients
reach both the mask token and, through the random-replacement path, the
patch projection.
"""

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..errors import ConfigError, DataError


@dataclass(frozen=True)
class MppCorruption:
    mask_prob: float = 0.5
    p_mask_token: float = 0.8
    p_random: float = 0.1
    p_keep: float = 0.1
    seed: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ConfigError(f"mask_prob must be in [0, 1], got {self.mask_prob}")
        for label in ("p_mask_token", "p_random", "p_keep"):
            if getattr(self, label) < 0:
                raise ConfigError(f"{label} must be >= 0")
        total = self.p_mask_token + self.p_random + self.p_keep
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"action probabilities must sum to 1, got {total}")


def corrupt_sequence(embedded, mask_token, corruption: MppCorruption,
                     rng: np.random.Generator | None = None):
    """Corrupt embedded patches [.., N, D]. Returns (corrupted, mask [.., N]).

    Draw order is fixed (mask draw, action draw, replacement draw, each over
    every position) so a seeded generator gives identical corruption
    regardless of what the draws select.
    """
    if rng is None:
        if corruption.seed is None:
            raise DataError("corrupt_sequence needs an rng or a seeded MppCorruption")
        rng = np.random.default_rng(corruption.seed)
    embedded = ad.as_array(embedded)
    mask_token = ad.as_array(mask_token)
    *lead, n, d = embedded.data.shape
    if mask_token.data.shape != (d,):
        raise DataError(f"mask token shape {mask_token.data.shape} != ({d},)")
    pos_shape = tuple(lead) + (n,)

    corrupted = rng.random(pos_shape) < corruption.mask_prob
    action = rng.random(pos_shape)
    use_token = corrupted & (action < corruption.p_mask_token)
    use_random = corrupted & ~use_token & (action < corruption.p_mask_token + corruption.p_random)
    # "another position": uniform over the other n-1, never the position itself
    offset = rng.integers(1, n, size=pos_shape) if n > 1 else np.zeros(pos_shape, dtype=np.int64)
    src = (np.arange(n) + offset) % n

    dtype = embedded.data.dtype
    keep01 = (~(use_token | use_random)).astype(dtype)[..., None]
    rand01 = use_random.astype(dtype)[..., None]
    token01 = use_token.astype(dtype)[..., None]

    out = ad.scale(embedded, keep01)
    if n > 1:
        out = ad.add(out, ad.scale(ad.gather_rows(embedded, src), rand01))
    out = ad.add(out, ad.scale(ad.reshape(mask_token, (1,) * len(lead) + (1, d)), token01))
    return out, corrupted


def mpp_loss(reconstruction, target, mask) -> ad.Array:
    """MSE over corrupted positions only; target is the raw patch tokens."""
    target_data = target.tokens if hasattr(target, "tokens") else target
    if isinstance(target_data, ad.Array):
        target_data = target_data.data
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("mpp_loss: corruption mask selects no positions")
    return ad.mse(reconstruction, np.asarray(target_data), mask=mask)
