"""Patch tables: triangular patches of a high-order icosphere.

A patch is the barycentric lattice of high-order vertices lying on one face of
the low-order (patch_order) icosphere. Per-patch vertex order is canonical:
lattice rows starting at face corner v0, row r scanning from the v1 side
toward the v2 side, so position (r, c) has barycentric coords
((n-r)/n, (r-c)/n, c/n) with n = 2^(high_order - patch_order).

The lattice is refined alongside the mesh itself, one subdivision step at a
time, so patch entries are mesh vertex indices by construction and boundary
vertices are shared (duplicated) between adjacent patches.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ConfigError, ShapeError
from .icosphere import MAX_ORDER, build_icosphere, edge_code, subdivide


def lattice_size(n: int) -> int:
    """Vertices in a triangular lattice of side n."""
    return (n + 1) * (n + 2) // 2


def _pos(r: int, c: int) -> int:
    return r * (r + 1) // 2 + c


@lru_cache(maxsize=16)
def _refinement_maps(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Index maps taking a side-n lattice to side-2n after one subdivision.

    Returns (copy_src, mid_a, mid_b), each of length lattice_size(2n).
    copy_src[p] >= 0 means new position p keeps old vertex copy_src[p];
    otherwise p is the midpoint of old lattice positions mid_a[p], mid_b[p],
    which are always lattice neighbours and hence a mesh edge.
    """
    size = lattice_size(2 * n)
    copy_src = np.full(size, -1, dtype=np.int64)
    mid_a = np.zeros(size, dtype=np.int64)
    mid_b = np.zeros(size, dtype=np.int64)
    for big_r in range(2 * n + 1):
        for big_c in range(big_r + 1):
            p = _pos(big_r, big_c)
            r_even, c_even = big_r % 2 == 0, big_c % 2 == 0
            if r_even and c_even:
                copy_src[p] = _pos(big_r // 2, big_c // 2)
            elif not r_even and c_even:
                mid_a[p] = _pos(big_r // 2, big_c // 2)
                mid_b[p] = _pos(big_r // 2 + 1, big_c // 2)
            elif not r_even and not c_even:
                mid_a[p] = _pos((big_r - 1) // 2, (big_c - 1) // 2)
                mid_b[p] = _pos((big_r + 1) // 2, (big_c + 1) // 2)
            else:
                mid_a[p] = _pos(big_r // 2, (big_c - 1) // 2)
                mid_b[p] = _pos(big_r // 2, (big_c + 1) // 2)
    return copy_src, mid_a, mid_b


@dataclass(frozen=True)
class PatchTable:
    """Vertex-index table mapping high-order vertices into triangular patches."""

    high_order: int
    patch_order: int
    patches: np.ndarray  # [N, V] int32, canonical row order per patch

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]

    @property
    def verts_per_patch(self) -> int:
        return self.patches.shape[1]

    @property
    def lattice_side(self) -> int:
        return 2 ** (self.high_order - self.patch_order)

    def boundary_mask(self) -> np.ndarray:
        """Boolean [V]: lattice positions on the patch border (shared verts)."""
        n = self.lattice_side
        mask = np.zeros(self.verts_per_patch, dtype=bool)
        for r in range(n + 1):
            for c in range(r + 1):
                if r == n or c == 0 or c == r:
                    mask[_pos(r, c)] = True
        return mask

    def vertex_patch_counts(self) -> np.ndarray:
        """How many patches contain each high-order vertex (>= 1 for all)."""
        n_verts = 10 * 4**self.high_order + 2
        return np.bincount(self.patches.ravel(), minlength=n_verts)


def build_patch_table(high_order: int, patch_order: int) -> PatchTable:
    """Patch table for patches of `patch_order` faces on a `high_order` sphere."""
    for label, value in (("high_order", high_order), ("patch_order", patch_order)):
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
            raise ConfigError(f"{label} must be an integer, got {value!r}")
    if not 0 <= patch_order < high_order <= MAX_ORDER:
        raise ConfigError(
            f"need 0 <= patch_order < high_order <= {MAX_ORDER}, "
            f"got patch_order={patch_order}, high_order={high_order}"
        )

    base = build_icosphere(patch_order)
    # side-1 lattice of face (a, b, c) is [(0,0)=a, (1,0)=b, (1,1)=c]
    flat = base.faces.astype(np.int64)
    verts, faces = base.vertices, base.faces
    n = 1
    for _ in range(patch_order, high_order):
        new_verts, new_faces, codes = subdivide(verts, faces)
        copy_src, mid_a, mid_b = _refinement_maps(n)
        is_mid = copy_src < 0
        new_flat = np.empty((flat.shape[0], copy_src.size), dtype=np.int64)
        new_flat[:, ~is_mid] = flat[:, copy_src[~is_mid]]
        u = flat[:, mid_a[is_mid]]
        v = flat[:, mid_b[is_mid]]
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        new_flat[:, is_mid] = verts.shape[0] + np.searchsorted(codes, edge_code(lo, hi))
        flat = new_flat
        verts, faces = new_verts, new_faces
        n *= 2

    patches = flat.astype(np.int32)
    patches.setflags(write=False)
    return PatchTable(high_order=int(high_order), patch_order=int(patch_order), patches=patches)


@dataclass(frozen=True)
class PatchSequence:
    """Flattened patch tokens for one hemisphere surface."""

    tokens: np.ndarray  # [N, V*C], channel-major per token
    channels: tuple[str, ...]
    subject: str = ""
    hemi: str = ""

    @property
    def n_patches(self) -> int:
        return self.tokens.shape[0]

    @property
    def patch_dim(self) -> int:
        return self.tokens.shape[1]


def extract_patches(signal, table: PatchTable, subject: str = "", hemi: str = "") -> PatchSequence:
    """Gather per-vertex channels into [N, V*C] tokens, channel-major.

    Token i is (channel 0 at the V patch vertices, then channel 1, ...), in
    canonical lattice order. `signal` is a SurfaceSignal or a [V_mesh, C] array.
    """
    values = signal.values if hasattr(signal, "values") else np.asarray(signal)
    names = tuple(getattr(signal, "channel_names", ()) or ())
    if values.ndim != 2:
        raise ShapeError(f"signal values must be [vertices, channels], got shape {values.shape}")
    expected = 10 * 4**table.high_order + 2
    if values.shape[0] != expected:
        raise ShapeError(
            f"signal has {values.shape[0]} vertices but the table's high-order "
            f"mesh has {expected}"
        )
    gathered = values[table.patches]  # [N, V, C]
    tokens = np.ascontiguousarray(np.swapaxes(gathered, 1, 2)).reshape(table.n_patches, -1)
    return PatchSequence(tokens=tokens, channels=names, subject=subject, hemi=hemi)


def scatter_patches(tokens: np.ndarray, table: PatchTable, channels: int) -> np.ndarray:
    """Inverse of extract_patches: average token entries back onto vertices."""
    n, v = table.n_patches, table.verts_per_patch
    if tokens.shape != (n, v * channels):
        raise ShapeError(f"tokens shape {tokens.shape} != ({n}, {v * channels})")
    per_channel = tokens.reshape(n, channels, v)
    n_verts = 10 * 4**table.high_order + 2
    acc = np.zeros((n_verts, channels), dtype=np.float64)
    counts = np.zeros(n_verts, dtype=np.int64)
    for p in range(n):
        np.add.at(acc, table.patches[p], per_channel[p].T)
        np.add.at(counts, table.patches[p], 1)
    return (acc / counts[:, None]).astype(tokens.dtype)
