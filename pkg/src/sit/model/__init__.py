"""Surface transformer model: config, parameters, forward passes."""

from .config import SiTConfig, VARIANTS, param_count, param_shapes, variant_config
from .network import (
    AttentionRecord,
    SiTModel,
    assemble_sequence,
    embed_sequence,
    encode,
    forward_mpp,
    forward_regress,
    msa,
    project_patches,
    regression_head,
    self_attention,
    transformer_block,
)

__all__ = [
    "AttentionRecord",
    "SiTConfig",
    "SiTModel",
    "VARIANTS",
    "assemble_sequence",
    "embed_sequence",
    "encode",
    "forward_mpp",
    "forward_regress",
    "msa",
    "param_count",
    "param_shapes",
    "project_patches",
    "regression_head",
    "self_attention",
    "transformer_block",
    "variant_config",
]
