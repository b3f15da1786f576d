"""Attention rollout and surface attention maps.

Rollout propagates per-head attention from the regression token back to the
input patches: each layer's matrix is residual-adjusted (0.5 * (A + I), rows
renormalized), the adjusted matrices are multiplied last-layer-first, and
the regression-token row of the product is read off. Special-token columns
(the regression token itself, plus any trailing covariate tokens) are
dropped, leaving one weight per patch. Per-head rollout keeps heads separate
at every layer.

Patch weights map to vertices by averaging over the patches containing each
vertex (boundary vertices belong to 2..6 patches).
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError, ShapeError
from ..geometry import PatchTable
from ..geometry.formats import SurfaceSignal, write_ssig
from ..model import AttentionRecord


def residual_adjust(attention: np.ndarray) -> np.ndarray:
    """0.5 * (A + I) with rows renormalized to sum to 1."""
    s = attention.shape[-1]
    if attention.shape[-2] != s:
        raise ShapeError(f"attention must be square, got {attention.shape}")
    adjusted = 0.5 * (attention + np.eye(s, dtype=attention.dtype))
    return adjusted / adjusted.sum(axis=-1, keepdims=True)


def rollout(record: AttentionRecord, head: int, n_patches: int | None = None) -> np.ndarray:
    """Patch weights [N] for one head (leading batch axes pass through)."""
    if not 0 <= head < record.heads:
        raise ConfigError(f"head {head} out of range [0, {record.heads})")
    product = None
    for layer in range(record.layers):
        adjusted = residual_adjust(np.asarray(record.get(layer, head), dtype=np.float64))
        product = adjusted if product is None else adjusted @ product
    row = product[..., 0, :]  # attribution of the regression token
    n = n_patches if n_patches is not None else row.shape[-1] - 1
    if not 0 < n < row.shape[-1]:
        raise ShapeError(f"n_patches {n} out of range for sequence length {row.shape[-1]}")
    return row[..., 1 : n + 1]


def last_layer_row(record: AttentionRecord, head: int, n_patches: int | None = None) -> np.ndarray:
    """Raw final-layer regression-token attention over patches (no rollout)."""
    mat = np.asarray(record.get(record.layers - 1, head), dtype=np.float64)
    row = mat[..., 0, :]
    n = n_patches if n_patches is not None else row.shape[-1] - 1
    return row[..., 1 : n + 1]


def patches_to_vertices(patch_weights: np.ndarray, table: PatchTable) -> np.ndarray:
    """Vertex map: mean weight of the patches containing each vertex."""
    patch_weights = np.asarray(patch_weights, dtype=np.float64)
    if patch_weights.shape != (table.n_patches,):
        raise DataError(
            f"{patch_weights.shape} weights for a table of {table.n_patches} patches"
        )
    n_verts = 10 * 4**table.high_order + 2
    flat = table.patches.ravel()
    sums = np.bincount(flat, weights=np.repeat(patch_weights, table.verts_per_patch),
                       minlength=n_verts)
    counts = np.bincount(flat, minlength=n_verts)
    return sums / counts


@dataclass(frozen=True)
class VertexAttentionMap:
    """Per-head vertex weights plus provenance metadata."""

    values: np.ndarray  # [heads, n_vertices], non-negative
    layer_range: tuple[int, int]
    subject: str = ""
    task: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"vertex map must be [heads, vertices], got {values.shape}")
        if not np.isfinite(values).all() or (values < 0).any():
            raise DataError("vertex attention maps must be finite and non-negative")
        object.__setattr__(self, "values", values)


def threshold_map(vertex_map: np.ndarray, quantile: float) -> np.ndarray:
    """Zero entries below the q-quantile; ceil((1-q)*n) largest survive."""
    if not 0.0 <= quantile < 1.0:
        raise ConfigError(f"quantile must be in [0, 1), got {quantile}")
    vertex_map = np.asarray(vertex_map, dtype=np.float64)
    if quantile == 0.0:
        return vertex_map.copy()
    n = vertex_map.shape[-1]
    keep = int(np.ceil((1.0 - quantile) * n))
    kth = np.partition(vertex_map, n - keep, axis=-1)[..., n - keep, None]
    return np.where(vertex_map >= kth, vertex_map, 0.0)


def average_maps(maps: list[VertexAttentionMap]) -> VertexAttentionMap:
    """Element-wise mean per head over equally-shaped maps."""
    if not maps:
        raise DataError("average_maps needs at least one map")
    shape = maps[0].values.shape
    for m in maps[1:]:
        if m.values.shape != shape:
            raise DataError(f"map shapes differ: {m.values.shape} vs {shape}")
    mean = np.mean([m.values for m in maps], axis=0)
    label = maps[0].subject if len(maps) == 1 else f"average({len(maps)} maps)"
    return VertexAttentionMap(
        values=mean, layer_range=maps[0].layer_range, subject=label, task=maps[0].task
    )


def save_attention_ssig(path, vmap: VertexAttentionMap) -> None:
    """Write per-head maps as one SSIG channel per head."""
    names = tuple(f"head{h}" for h in range(vmap.values.shape[0]))
    write_ssig(path, SurfaceSignal(values=vmap.values.T.astype(np.float32),
                                   channel_names=names))


def flat_map_png(path, vertex_values: np.ndarray, order: int,
                 width: int = 720, height: int = 360) -> bool:
    """Best-effort longitude-latitude PNG of one vertex map.

    Returns False (after a log message) when matplotlib is unavailable.
    """
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        import logging

        logging.getLogger(__name__).warning("matplotlib not installed; skipping PNG export")
        return False
    from ..geometry import build_icosphere
    from ..geometry.locate import SphereLocator

    lon = (np.arange(width) + 0.5) / width * 2.0 * np.pi - np.pi
    lat = np.pi / 2.0 - (np.arange(height) + 0.5) / height * np.pi
    lon_grid, lat_grid = np.meshgrid(lon, lat)
    points = np.stack(
        [np.cos(lat_grid) * np.cos(lon_grid),
         np.cos(lat_grid) * np.sin(lon_grid),
         np.sin(lat_grid)],
        axis=-1,
    ).reshape(-1, 3)
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    faces, bary = SphereLocator(order).locate(points)
    mesh = build_icosphere(order)
    corner_vals = np.asarray(vertex_values, dtype=np.float64)[mesh.faces[faces]]
    image = np.einsum("mk,mk->m", bary, corner_vals).reshape(height, width)

    fig, ax = plt.subplots(figsize=(width / 100, height / 100), dpi=100)
    im = ax.imshow(image, origin="upper", extent=[-180, 180, -90, 90], cmap="magma")
    ax.set_xlabel("longitude (deg)")
    ax.set_ylabel("latitude (deg)")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return True
