"""The surface transformer: embedding, pre-norm encoder blocks, heads.

Everything is expressed in the autodiff primitives so one Tape covers the
whole loss. Functions accept [S, D]-shaped single examples or [B, S, D]
batches; the batch case is what training uses.
"""

import numpy as np

from .. import autodiff as ad
from ..errors import DataError, ShapeError, StateError
from .config import SiTConfig, param_shapes


def _trunc_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) resampled until within 2 std (standard ViT init)."""
    out = rng.standard_normal(shape) * std
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(out) > 2.0 * std
    return out.astype(dtype, copy=False)


class AttentionRecord:
    """Per-layer, per-head attention matrices captured during a forward pass."""

    def __init__(self, layers: int, heads: int):
        self.layers = layers
        self.heads = heads
        self._mats: list[list[np.ndarray | None]] = [[None] * heads for _ in range(layers)]

    def store(self, layer: int, head: int, matrix: np.ndarray):
        self._mats[layer][head] = matrix

    def get(self, layer: int, head: int) -> np.ndarray:
        mat = self._mats[layer][head]
        if mat is None:
            raise StateError(f"attention for layer {layer}, head {head} was never recorded")
        return mat

    @property
    def complete(self) -> bool:
        return all(mat is not None for row in self._mats for mat in row)

    def stacked(self) -> np.ndarray:
        """[layers, heads, ..., S, S] array; StateError when incomplete."""
        if not self.complete:
            raise StateError("attention record incomplete; run a recorded forward first")
        return np.stack([np.stack(row) for row in self._mats])


class SiTModel:
    """Parameter container. Shapes come from config.param_shapes."""

    def __init__(self, config: SiTConfig, dtype=np.float32, seed: int = 0):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, ad.Array] = {}
        for name, shape in param_shapes(config).items():
            if name.endswith((".g",)):
                data = np.ones(shape, dtype=self.dtype)
            elif name.endswith((".b",)):
                data = np.zeros(shape, dtype=self.dtype)
            else:
                data = _trunc_normal(rng, shape, 0.02, self.dtype)
            self.params[name] = ad.Array(data, requires_grad=True, name=name)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    def load_state(self, tensors: dict[str, np.ndarray], strict: bool = True):
        missing = [n for n in self.params if n not in tensors]
        extra = [n for n in tensors if n not in self.params]
        if strict and (missing or extra):
            raise DataError(f"checkpoint mismatch: missing {missing[:4]}, extra {extra[:4]}")
        for name, data in tensors.items():
            if name not in self.params:
                continue
            param = self.params[name]
            if tuple(data.shape) != param.data.shape:
                raise ShapeError(
                    f"tensor {name}: checkpoint shape {data.shape} != model {param.data.shape}"
                )
            param.data = np.ascontiguousarray(data, dtype=self.dtype)

    def set_trainable(self, predicate):
        """requires_grad per parameter name; frozen tensors never get grads."""
        for name, p in self.params.items():
            p.requires_grad = bool(predicate(name))


def self_attention(x, wq, bq, wk, bk, wv, bv, record: AttentionRecord | None = None,
                   layer: int = 0, head: int = 0) -> ad.Array:
    """Scaled dot-product attention for one head.

    x is [..., S, D]; the weight slices are [D, D_h]. Logits are scaled by
    1/sqrt(D_h), the per-head width.
    """
    q = ad.add(ad.matmul(x, wq), bq)
    k = ad.add(ad.matmul(x, wk), bk)
    v = ad.add(ad.matmul(x, wv), bv)
    d_h = q.data.shape[-1]
    logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(d_h))
    attn = ad.softmax_rows(logits)
    if record is not None:
        record.store(layer, head, np.array(attn.data, copy=True))
    return ad.matmul(attn, v)


def msa(x, params: dict, prefix: str, heads: int,
        record: AttentionRecord | None = None, layer: int = 0) -> ad.Array:
    """Multi-head self-attention: h heads on disjoint D_h slices, then W_O."""
    d = x.data.shape[-1]
    if d % heads != 0:
        raise ShapeError(f"hidden {d} not divisible by heads {heads}")
    d_h = d // heads
    wq, bq = params[f"{prefix}.attn.wq"], params[f"{prefix}.attn.bq"]
    wk, bk = params[f"{prefix}.attn.wk"], params[f"{prefix}.attn.bk"]
    wv, bv = params[f"{prefix}.attn.wv"], params[f"{prefix}.attn.bv"]
    outs = []
    for h in range(heads):
        lo, hi = h * d_h, (h + 1) * d_h
        outs.append(
            self_attention(
                x,
                ad.slice(wq, lo, hi, axis=-1), ad.slice(bq, lo, hi, axis=-1),
                ad.slice(wk, lo, hi, axis=-1), ad.slice(bk, lo, hi, axis=-1),
                ad.slice(wv, lo, hi, axis=-1), ad.slice(bv, lo, hi, axis=-1),
                record=record, layer=layer, head=h,
            )
        )
    merged = outs[0] if len(outs) == 1 else ad.concat(outs, axis=-1)
    return ad.add(ad.matmul(merged, params[f"{prefix}.attn.wo"]), params[f"{prefix}.attn.bo"])


def transformer_block(x, params: dict, layer: int, heads: int, dropout_p: float,
                      training: bool, rng, record: AttentionRecord | None = None) -> ad.Array:
    """Pre-norm block: Z = MSA(LN(X)) + X, then X' = FFN(LN(Z)) + Z."""
    prefix = f"blocks.{layer}"
    normed = ad.layernorm_rows(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    z = ad.add(msa(normed, params, prefix, heads, record=record, layer=layer), x)
    normed2 = ad.layernorm_rows(z, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])
    h = ad.add(ad.matmul(normed2, params[f"{prefix}.ffn.w1"]), params[f"{prefix}.ffn.b1"])
    h = ad.gelu(h)
    h = ad.dropout(h, dropout_p, training, rng)
    h = ad.add(ad.matmul(h, params[f"{prefix}.ffn.w2"]), params[f"{prefix}.ffn.b2"])
    h = ad.dropout(h, dropout_p, training, rng)
    return ad.add(h, z)


def _as_batched_tokens(patches) -> tuple[ad.Array, bool]:
    tokens = patches
    if hasattr(tokens, "tokens"):  # PatchSequence
        tokens = tokens.tokens
    tokens = ad.as_array(tokens)
    if tokens.data.ndim == 2:
        return ad.reshape(tokens, (1, *tokens.data.shape)), True
    if tokens.data.ndim == 3:
        return tokens, False
    raise ShapeError(f"patch tokens must be [N, P] or [B, N, P], got {tokens.data.shape}")


def project_patches(patches, model: SiTModel) -> tuple[ad.Array, bool]:
    """Patch tokens -> [B, N, D] embeddings (pre-position). Returns (x, unbatch)."""
    cfg = model.config
    tokens, unbatch = _as_batched_tokens(patches)
    _, n, p = tokens.data.shape
    if p != cfg.patch_dim:
        raise ShapeError(f"patch dim {p} != configured {cfg.patch_dim}")
    if n != cfg.seq_len:
        raise ShapeError(f"{n} patch tokens != configured seq_len {cfg.seq_len}")
    x = ad.add(ad.matmul(tokens, model.params["patch_proj.w"]), model.params["patch_proj.b"])
    return x, unbatch


def assemble_sequence(embedded, model: SiTModel, extra_tokens=None) -> ad.Array:
    """Prepend the regression token to [B, N, D] embeddings and add positions.

    Extra tokens (deconfounding covariates) are appended after position N and
    receive no positional embedding; S = N + 1 + len(extra_tokens). Masked
    pretraining corrupts the embeddings between projection and this step.
    """
    cfg = model.config
    x = ad.as_array(embedded)
    if x.data.ndim != 3 or x.data.shape[-1] != cfg.hidden:
        raise ShapeError(f"embedded sequence must be [B, N, {cfg.hidden}], got {x.data.shape}")
    b = x.data.shape[0]
    reg = ad.add(
        ad.reshape(model.params["reg_token"], (1, 1, cfg.hidden)),
        np.zeros((b, 1, 1), dtype=model.dtype),
    )
    x = ad.concat([reg, x], axis=-2)
    x = ad.add(x, model.params["pos_embed"])

    for extra in extra_tokens or []:
        extra = ad.as_array(extra)
        if extra.data.ndim == 1:
            extra = ad.reshape(extra, (1, 1, -1))
        elif extra.data.ndim == 2:
            extra = ad.reshape(extra, (extra.data.shape[0], 1, -1))
        if extra.data.shape[-1] != cfg.hidden:
            raise ShapeError(f"extra token width {extra.data.shape[-1]} != hidden {cfg.hidden}")
        if extra.data.shape[0] == 1 and b > 1:
            extra = ad.add(extra, np.zeros((b, 1, 1), dtype=model.dtype))
        x = ad.concat([x, extra], axis=-2)
    return x


def embed_sequence(patches, model: SiTModel, extra_tokens=None) -> ad.Array:
    """Project patches to D, prepend the regression token, add positions.

    Output is [B, S, D] for batched input, [S, D] otherwise.
    """
    x, unbatch = project_patches(patches, model)
    x = assemble_sequence(x, model, extra_tokens)
    return ad.reshape(x, x.data.shape[1:]) if unbatch else x


def encode(x, model: SiTModel, training: bool = False, rng=None,
           record: AttentionRecord | None = None) -> ad.Array:
    """Run all blocks plus the final LayerNorm."""
    cfg = model.config
    for layer in range(cfg.layers):
        x = transformer_block(
            x, model.params, layer, cfg.heads, cfg.dropout_p, training, rng, record=record
        )
    return ad.layernorm_rows(x, model.params["final_ln.g"], model.params["final_ln.b"])


def regression_head(x0, model: SiTModel) -> ad.Array:
    """LN -> D->D/2 -> GELU -> D/2->1 on the regression-token representation."""
    h = ad.layernorm_rows(x0, model.params["head.ln.g"], model.params["head.ln.b"])
    h = ad.add(ad.matmul(h, model.params["head.fc1.w"]), model.params["head.fc1.b"])
    h = ad.gelu(h)
    return ad.add(ad.matmul(h, model.params["head.fc2.w"]), model.params["head.fc2.b"])


def forward_regress(patches, model: SiTModel, extra_tokens=None, training: bool = False,
                    rng=None, record: AttentionRecord | None = None) -> ad.Array:
    """Predict one real value per example. Returns shape [B] (or scalar)."""
    x = embed_sequence(patches, model, extra_tokens)
    unbatched = x.data.ndim == 2
    if unbatched:
        x = ad.reshape(x, (1, *x.data.shape))
    x = encode(x, model, training=training, rng=rng, record=record)
    x0 = ad.slice(x, 0, 1, axis=-2)  # regression token row
    pred = regression_head(x0, model)  # [B, 1, 1]
    return ad.reshape(pred, () if unbatched else (pred.data.shape[0],))


def forward_mpp(corrupted_embedded, model: SiTModel, training: bool = False, rng=None,
                record: AttentionRecord | None = None) -> ad.Array:
    """Reconstruct patch tokens from an already-corrupted embedded sequence."""
    x = ad.as_array(corrupted_embedded)
    unbatched = x.data.ndim == 2
    if unbatched:
        x = ad.reshape(x, (1, *x.data.shape))
    n = model.config.seq_len
    if x.data.shape[-2] != n + 1:
        raise ShapeError(
            f"mpp sequence length {x.data.shape[-2]} != seq_len+1 = {n + 1} "
            "(no extra tokens during masked pretraining)"
        )
    x = encode(x, model, training=training, rng=rng, record=record)
    patch_rows = ad.slice(x, 1, n + 1, axis=-2)
    recon = ad.add(ad.matmul(patch_rows, model.params["mpp_head.w"]), model.params["mpp_head.b"])
    return ad.reshape(recon, recon.data.shape[1:]) if unbatched else recon
