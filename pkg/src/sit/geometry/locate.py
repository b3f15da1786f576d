"""Point location and barycentric resampling on sphere meshes.

Icosphere location walks the subdivision hierarchy: find the containing base
icosahedron face, then descend through the four children per level (children
of face f are 4f..4f+3), O(order) instead of O(faces). Containment tests and
barycentric weights use scalar triple products, which is exactly gnomonic
projection onto the planar face triangle followed by planar barycentrics.
"""

from functools import lru_cache

import numpy as np

from ..errors import DataError, ShapeError
from .formats import SurfaceSignal
from .icosphere import Icosphere, build_icosphere, mirror_mesh, mirror_permutation, vertex_count

# a det this small counts as "on the boundary"; ties go to the lower face index
DET_TOL = 1e-12


def _triple_products(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """det(p, v1, v2), det(v0, p, v2), det(v0, v1, p) for each point/face pair.

    points [M, 3]; corners [M, 3, 3] (face corners per point). Result [M, 3],
    proportional to gnomonic barycentric weights when all non-negative.
    """
    v0, v1, v2 = corners[:, 0], corners[:, 1], corners[:, 2]
    w0 = np.einsum("ij,ij->i", points, np.cross(v1, v2))
    w1 = np.einsum("ij,ij->i", v0, np.cross(points, v2))
    w2 = np.einsum("ij,ij->i", v0, np.cross(v1, points))
    return np.stack([w0, w1, w2], axis=1)


class SphereLocator:
    """Reusable hierarchical locator for one canonical icosphere order."""

    def __init__(self, order: int):
        self.order = order
        self._chain = [build_icosphere(k) for k in range(order + 1)]

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(face index [M], barycentric [M, 3]) for unit points [M, 3]."""
        points = np.asarray(points, dtype=np.float64)
        single = points.ndim == 1
        points = np.atleast_2d(points)
        if points.shape[1] != 3:
            raise ShapeError(f"points must be [M, 3], got {points.shape}")
        norms = np.linalg.norm(points, axis=1)
        off = np.abs(norms - 1.0)
        if off.max() > 1e-9:
            raise DataError(f"points must be unit vectors (max |norm-1| = {off.max():.3g})")

        base = self._chain[0]
        m = points.shape[0]
        # base level: test all 20 faces, take the lowest index that contains
        faces = np.full(m, -1, dtype=np.int64)
        best = np.full(m, -np.inf)
        best_face = np.zeros(m, dtype=np.int64)
        for f in range(base.n_faces):
            corners = np.broadcast_to(base.vertices[base.faces[f]], (m, 3, 3))
            w = _triple_products(points, corners)
            inside = (w >= -DET_TOL).all(axis=1) & (faces < 0)
            faces[inside] = f
            wmin = w.min(axis=1)
            improve = wmin > best
            best[improve] = wmin[improve]
            best_face[improve] = f
        # numerically homeless points (should not happen): most-contained face
        faces[faces < 0] = best_face[faces < 0]

        for level in range(1, self.order + 1):
            mesh = self._chain[level]
            cand = faces[:, None] * 4 + np.arange(4)[None, :]  # [M, 4]
            corners = mesh.vertices[mesh.faces[cand]]  # [M, 4, 3, 3]
            w = _triple_products(
                np.repeat(points, 4, axis=0), corners.reshape(-1, 3, 3)
            ).reshape(m, 4, 3)
            inside = (w >= -DET_TOL).all(axis=2)
            first = np.argmax(inside, axis=1)  # lowest child index that contains
            none_inside = ~inside.any(axis=1)
            if none_inside.any():
                first[none_inside] = np.argmax(w.min(axis=2)[none_inside], axis=1)
            faces = cand[np.arange(m), first]

        mesh = self._chain[self.order]
        corners = mesh.vertices[mesh.faces[faces]]
        w = _triple_products(points, corners)
        w = np.clip(w, 0.0, None)
        bary = w / w.sum(axis=1, keepdims=True)
        if single:
            return faces[0], bary[0]
        return faces, bary


@lru_cache(maxsize=16)
def _cached_locator(order: int) -> SphereLocator:
    return SphereLocator(order)


def locate_on_sphere(point: np.ndarray, mesh: Icosphere) -> tuple[int, np.ndarray]:
    """Containing face and barycentric coords of a unit point on an icosphere."""
    face, bary = _cached_locator(mesh.order).locate(np.asarray(point, dtype=np.float64))
    return int(face), bary


def _locate_generic(points: np.ndarray, vertices: np.ndarray, faces: np.ndarray):
    """Location on an arbitrary sphere triangulation via nearest-vertex search.

    Candidate faces are those incident to the few nearest vertices of each
    query point; falls back to widening the search, then to a full scan.
    """
    from scipy.spatial import cKDTree

    m = points.shape[0]
    n_faces = faces.shape[0]
    incident: list[list[int]] = [[] for _ in range(vertices.shape[0])]
    for f in range(n_faces):
        for v in faces[f]:
            incident[v].append(f)
    tree = cKDTree(vertices)

    out_face = np.full(m, -1, dtype=np.int64)
    out_bary = np.zeros((m, 3))
    for i, p in enumerate(points):
        found = False
        for k in (4, 16, 64):
            _, nearest = tree.query(p, k=min(k, vertices.shape[0]))
            cand = sorted({f for v in np.atleast_1d(nearest) for f in incident[v]})
            for f in cand:
                corners = vertices[faces[f]][None]
                w = _triple_products(p[None], corners)[0]
                if (w >= -DET_TOL).all():
                    out_face[i] = f
                    out_bary[i] = np.clip(w, 0.0, None)
                    found = True
                    break
            if found:
                break
        if not found:  # full scan, keep the most-contained face
            corners = vertices[faces]
            w = _triple_products(np.broadcast_to(p, (n_faces, 3)), corners)
            f = int(np.argmax(w.min(axis=1)))
            out_face[i] = f
            out_bary[i] = np.clip(w[f], 0.0, None)
    out_bary /= out_bary.sum(axis=1, keepdims=True)
    return out_face, out_bary


def resample_barycentric(signal: SurfaceSignal, source_mesh, target: Icosphere) -> SurfaceSignal:
    """Resample a per-vertex signal onto a target icosphere.

    source_mesh is an Icosphere or a (vertices, faces) pair of a sphere
    triangulation. Each target vertex takes the barycentric combination of
    the three source vertices of its containing source face.
    """
    if isinstance(source_mesh, Icosphere):
        src_verts, src_faces = source_mesh.vertices, source_mesh.faces
        hierarchical: int | None = source_mesh.order
    else:
        src_verts, src_faces = source_mesh
        src_verts = np.asarray(src_verts, dtype=np.float64)
        src_faces = np.asarray(src_faces)
        hierarchical = None

    if signal.values.shape[0] != src_verts.shape[0]:
        raise DataError(
            f"signal has {signal.values.shape[0]} vertices, source mesh has {src_verts.shape[0]}"
        )
    areas = 0.5 * np.linalg.norm(
        np.cross(
            src_verts[src_faces[:, 1]] - src_verts[src_faces[:, 0]],
            src_verts[src_faces[:, 2]] - src_verts[src_faces[:, 0]],
        ),
        axis=1,
    )
    degenerate = np.flatnonzero(areas < 1e-14)
    if degenerate.size:
        raise DataError(f"degenerate source face {int(degenerate[0])} (zero area)")

    if hierarchical is not None:
        face, bary = _cached_locator(hierarchical).locate(target.vertices)
    else:
        face, bary = _locate_generic(target.vertices, src_verts, src_faces)

    corner_vals = signal.values[src_faces[face]]  # [M, 3, C]
    values = np.einsum("mk,mkc->mc", bary, corner_vals).astype(signal.values.dtype)
    return SurfaceSignal(values=values, channel_names=signal.channel_names)


def mirror_hemisphere(obj):
    """Sagittal mirror (x -> -x). Involution.

    Accepts a point array [..., 3] (coordinates negated), an Icosphere or
    (vertices, faces) pair (vertices mirrored, faces rewound to stay outward),
    or a SurfaceSignal on a canonical icosphere (values permuted exactly, no
    resampling, since the canonical vertex set is x-mirror symmetric).
    """
    if isinstance(obj, SurfaceSignal):
        order = _order_for_vertex_count(obj.values.shape[0])
        perm = mirror_permutation(order)
        return SurfaceSignal(values=obj.values[perm], channel_names=obj.channel_names)
    if isinstance(obj, Icosphere):
        mv, mf = mirror_mesh(obj.vertices, obj.faces)
        return mv, mf
    if isinstance(obj, tuple) and len(obj) == 2:
        return mirror_mesh(np.asarray(obj[0], dtype=np.float64), np.asarray(obj[1]))
    pts = np.asarray(obj, dtype=np.float64)
    if pts.shape[-1] != 3:
        raise ShapeError(f"expected [..., 3] points, got shape {pts.shape}")
    out = pts.copy()
    out[..., 0] = -out[..., 0]
    return out


def _order_for_vertex_count(n: int) -> int:
    for k in range(9):
        if vertex_count(k) == n:
            return k
    raise DataError(f"{n} vertices does not match any icosphere order 0..8")
