"""Synthetic data generation, manifests, normalization, loading."""

from .dataset import (
    LoadedData,
    LoadedSplit,
    ManifestRow,
    NormStats,
    compute_norm_stats,
    load_dataset,
    load_example,
    read_manifest,
)
from .synthetic import MESH_ORDER, SyntheticSpec, generate_synthetic

__all__ = [
    "LoadedData",
    "LoadedSplit",
    "ManifestRow",
    "MESH_ORDER",
    "NormStats",
    "SyntheticSpec",
    "compute_norm_stats",
    "generate_synthetic",
    "load_dataset",
    "load_example",
    "read_manifest",
]
