"""Icospheres: regular icosahedron refined by midpoint subdivision.

Construction is fully deterministic so that meshes, and everything keyed on
vertex/face indices downstream, are bit-identical across runs and platforms:

* base icosahedron vertices are sorted lexicographically by (x, y, z) before
  faces are assembled, and faces are stored smallest-index-first, sorted;
* one subdivision step keeps all parent vertices first (same indices), then
  appends one midpoint per parent edge in sorted parent-edge order;
* the four children of parent face f land at indices 4f..4f+3 in the order
  corner-a, corner-b, corner-c, center.

All faces wind counter-clockwise seen from outside the sphere, i.e.
det([v0, v1, v2]) > 0 for every face.
"""

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from ..errors import ConfigError

MAX_ORDER = 8

# order k: 10 * 4**k + 2 vertices, 20 * 4**k faces, 30 * 4**k edges


def vertex_count(order: int) -> int:
    return 10 * 4**order + 2


def face_count(order: int) -> int:
    return 20 * 4**order


def edge_count(order: int) -> int:
    return 30 * 4**order


@dataclass(frozen=True)
class Icosphere:
    """Unit-sphere triangle mesh from `order` midpoint subdivisions."""

    order: int
    vertices: np.ndarray  # [V, 3] float64, unit rows
    faces: np.ndarray  # [F, 3] int32, CCW from outside

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted (lo, hi) pairs, lexicographic."""
        f = self.faces
        pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)


def _base_icosahedron() -> tuple[np.ndarray, np.ndarray]:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = []
    for a in (-1.0, 1.0):
        for b in (-t, t):
            verts.append((a, b, 0.0))
            verts.append((0.0, a, b))
            verts.append((b, 0.0, a))
    verts = np.array(sorted(verts), dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)

    # Edges are the 30 closest pairs; squared chord length is 4/(1+t^2) after
    # normalization. Faces are the mutually adjacent triples.
    d2 = np.sum((verts[:, None, :] - verts[None, :, :]) ** 2, axis=2)
    edge_d2 = 4.0 / (1.0 + t * t)
    adj = np.abs(d2 - edge_d2) < 1e-9
    faces = []
    for i in range(12):
        for j in range(i + 1, 12):
            if not adj[i, j]:
                continue
            for k in range(j + 1, 12):
                if adj[i, k] and adj[j, k]:
                    faces.append((i, j, k))
    assert len(faces) == 20
    faces = np.array(faces, dtype=np.int64)

    # Outward winding: flip triangles whose vertex triple has negative det.
    tri = verts[faces]
    flip = np.linalg.det(tri) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    faces = np.array(sorted(map(tuple, faces)), dtype=np.int32)
    return verts, faces


class SubdivisionStep(NamedTuple):
    vertices: np.ndarray
    faces: np.ndarray
    edge_codes: np.ndarray  # sorted uint64 keys lo * 2**32 + hi, one per parent edge


def edge_code(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Pack an undirected edge (lo < hi) into one sortable uint64 key."""
    return lo.astype(np.uint64) * np.uint64(1 << 32) + hi.astype(np.uint64)


def subdivide(vertices: np.ndarray, faces: np.ndarray) -> SubdivisionStep:
    """One midpoint-subdivision step with the canonical index layout."""
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    pairs = np.unique(pairs, axis=0)  # sorted lexicographically: canonical order
    codes = edge_code(pairs[:, 0], pairs[:, 1])

    mids = vertices[pairs[:, 0]] + vertices[pairs[:, 1]]
    mids /= np.linalg.norm(mids, axis=1, keepdims=True)
    new_vertices = np.concatenate([vertices, mids])

    n_old = vertices.shape[0]

    def midpoint_index(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        lo = np.minimum(u, v)
        hi = np.maximum(u, v)
        return n_old + np.searchsorted(codes, edge_code(lo, hi))

    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    mab = midpoint_index(a, b)
    mbc = midpoint_index(b, c)
    mca = midpoint_index(c, a)

    # children of face f occupy rows 4f..4f+3: corner-a, corner-b, corner-c, center
    children = np.empty((faces.shape[0], 4, 3), dtype=np.int64)
    children[:, 0] = np.stack([a, mab, mca], axis=1)
    children[:, 1] = np.stack([mab, b, mbc], axis=1)
    children[:, 2] = np.stack([mca, mbc, c], axis=1)
    children[:, 3] = np.stack([mab, mbc, mca], axis=1)
    new_faces = children.reshape(-1, 3).astype(np.int32)
    return SubdivisionStep(new_vertices, new_faces, codes)


@lru_cache(maxsize=MAX_ORDER + 1)
def build_icosphere(order: int) -> Icosphere:
    """Canonical icosphere of the given subdivision order (0..8, cached)."""
    if not isinstance(order, (int, np.integer)) or isinstance(order, bool):
        raise ConfigError(f"icosphere order must be an integer, got {order!r}")
    if order < 0 or order > MAX_ORDER:
        raise ConfigError(f"icosphere order must be in [0, {MAX_ORDER}], got {order}")
    verts, faces = _base_icosahedron()
    for _ in range(order):
        verts, faces, _ = subdivide(verts, faces)
    verts.setflags(write=False)
    faces.setflags(write=False)
    return Icosphere(order=int(order), vertices=verts, faces=faces)


@lru_cache(maxsize=MAX_ORDER + 1)
def mirror_permutation(order: int) -> np.ndarray:
    """Vertex permutation realizing x -> -x on the canonical icosphere.

    The canonical vertex set is exactly symmetric under x-negation (the base
    coordinates come in +-x pairs and midpoint subdivision preserves the
    symmetry bit-for-bit since (-x) + (-x') == -(x + x') in IEEE arithmetic),
    so mirroring a per-vertex signal is an exact permutation, no resampling.
    Returns perm with perm[i] = index of the mirror image of vertex i.
    """
    mesh = build_icosphere(order)
    index = {v.tobytes(): i for i, v in enumerate(mesh.vertices)}
    mirrored = mesh.vertices * np.array([-1.0, 1.0, 1.0])
    # vertices on the x=0 plane carry +0.0; negation gives -0.0 whose byte
    # pattern differs, so canonicalize zeros before the bytewise lookup
    mirrored[mirrored == 0.0] = 0.0
    perm = np.empty(mesh.n_vertices, dtype=np.int64)
    for i, row in enumerate(mirrored):
        j = index.get(row.tobytes())
        if j is None:
            raise AssertionError("icosphere lost its mirror symmetry")
        perm[i] = j
    perm.setflags(write=False)
    return perm


def mirror_mesh(vertices: np.ndarray, faces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mirror an arbitrary mesh through the x=0 plane, restoring outward winding."""
    mv = vertices * np.array([-1.0, 1.0, 1.0])
    return mv, faces[:, ::-1].copy()
