"""Spherical mesh machinery: icospheres, patch tables, location, formats."""

from .formats import (
    SurfaceSignal,
    read_smesh,
    read_sptbl,
    read_ssig,
    write_smesh,
    write_sptbl,
    write_ssig,
)
from .icosphere import (
    Icosphere,
    build_icosphere,
    edge_count,
    face_count,
    mirror_permutation,
    subdivide,
    vertex_count,
)
from .locate import (
    SphereLocator,
    locate_on_sphere,
    mirror_hemisphere,
    resample_barycentric,
)
from .patching import (
    PatchSequence,
    PatchTable,
    build_patch_table,
    extract_patches,
    scatter_patches,
)

__all__ = [
    "Icosphere",
    "PatchSequence",
    "PatchTable",
    "SphereLocator",
    "SurfaceSignal",
    "build_icosphere",
    "build_patch_table",
    "edge_count",
    "extract_patches",
    "face_count",
    "locate_on_sphere",
    "mirror_hemisphere",
    "mirror_permutation",
    "read_smesh",
    "read_sptbl",
    "read_ssig",
    "resample_barycentric",
    "scatter_patches",
    "subdivide",
    "vertex_count",
    "write_smesh",
    "write_sptbl",
    "write_ssig",
]
