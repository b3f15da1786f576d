"""Attention capture, rollout, and surface attention maps."""

from .rollout import (
    VertexAttentionMap,
    average_maps,
    flat_map_png,
    last_layer_row,
    patches_to_vertices,
    residual_adjust,
    rollout,
    save_attention_ssig,
    threshold_map,
)

__all__ = [
    "VertexAttentionMap",
    "average_maps",
    "flat_map_png",
    "last_layer_row",
    "patches_to_vertices",
    "residual_adjust",
    "rollout",
    "save_attention_ssig",
    "threshold_map",
]
