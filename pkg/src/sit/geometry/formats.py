"""On-disk formats for meshes, per-vertex signals, and patch tables.

All three share the same layout: a short ASCII header (one "key value" pair
per line, terminated by "end"), then a little-endian binary payload. The
first line is "<MAGIC> <version>"; readers reject unknown magics and
versions. Headers are written in a fixed key order so files are
byte-reproducible.

  SMESH 1: order, vertices, faces; payload = float64 coords then uint32 faces
  SSIG  1: vertices, channels, names (comma-separated); payload = float32
           values, vertex-major (row = one vertex, all channels)
  SPTBL 1: high_order, patch_order, patches, verts_per_patch; payload =
           uint32 patch table, patch-major
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, ParseError

SMESH_VERSION = 1
SSIG_VERSION = 1
SPTBL_VERSION = 1


@dataclass(frozen=True)
class SurfaceSignal:
    """Per-vertex multi-channel scalar data; shape [vertices, channels]."""

    values: np.ndarray
    channel_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise DataError(f"signal values must be 2-D [vertices, channels], got {values.shape}")
        if not np.isfinite(values).all():
            raise DataError("signal contains NaN or Inf")
        names = tuple(self.channel_names)
        if names and len(names) != values.shape[1]:
            raise DataError(
                f"{len(names)} channel names for {values.shape[1]} channels"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", names)

    @property
    def n_vertices(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def _write_header(fh, magic: str, version: int, fields: list[tuple[str, str]]):
    fh.write(f"{magic} {version}\n".encode("ascii"))
    for key, value in fields:
        fh.write(f"{key} {value}\n".encode("ascii"))
    fh.write(b"end\n")


def _read_header(fh, magic: str, known_version: int) -> dict[str, str]:
    """Parse the ASCII header, raising ParseError with a byte offset."""
    first = fh.readline()
    parts = first.decode("ascii", errors="replace").split()
    if len(parts) != 2 or parts[0] != magic:
        raise ParseError(f"not a {magic} file (bad magic line {first!r})", offset=0)
    if not parts[1].isdigit() or int(parts[1]) != known_version:
        raise ParseError(f"unsupported {magic} version {parts[1]!r}", offset=len(magic) + 1)
    fields: dict[str, str] = {}
    while True:
        offset = fh.tell()
        line = fh.readline()
        if not line:
            raise ParseError(f"{magic} header ended before 'end'", offset=offset)
        text = line.decode("ascii", errors="replace").rstrip("\n")
        if text == "end":
            return fields
        key, sep, value = text.partition(" ")
        if not sep:
            raise ParseError(f"malformed {magic} header line {text!r}", offset=offset)
        fields[key] = value


def _header_int(fields: dict[str, str], key: str, magic: str) -> int:
    if key not in fields:
        raise ParseError(f"{magic} header missing '{key}'")
    try:
        return int(fields[key])
    except ValueError:
        raise ParseError(f"{magic} header field '{key}' is not an integer: {fields[key]!r}") from None


def _read_payload(fh, dtype, count: int, what: str) -> np.ndarray:
    offset = fh.tell()
    raw = fh.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise ParseError(
            f"truncated payload: wanted {count * dtype.itemsize} bytes of {what}, "
            f"got {len(raw)}",
            offset=offset,
        )
    extra = fh.read(1)
    if extra:
        raise ParseError(f"trailing bytes after {what} payload", offset=fh.tell() - 1)
    return np.frombuffer(raw, dtype=dtype)


def write_smesh(path, mesh) -> None:
    """Write an Icosphere to an SMESH file."""
    with open(path, "wb") as fh:
        _write_header(
            fh,
            "SMESH",
            SMESH_VERSION,
            [
                ("order", str(mesh.order)),
                ("vertices", str(mesh.n_vertices)),
                ("faces", str(mesh.n_faces)),
            ],
        )
        fh.write(np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(mesh.faces, dtype="<u4").tobytes())


def read_smesh(path):
    """Read an SMESH file back into an Icosphere."""
    from .icosphere import Icosphere

    with open(path, "rb") as fh:
        fields = _read_header(fh, "SMESH", SMESH_VERSION)
        order = _header_int(fields, "order", "SMESH")
        n_verts = _header_int(fields, "vertices", "SMESH")
        n_faces = _header_int(fields, "faces", "SMESH")
        payload = _read_payload(
            fh,
            np.dtype("<u1"),
            n_verts * 24 + n_faces * 12,
            "SMESH body",
        )
    verts = payload[: n_verts * 24].view("<f8").reshape(n_verts, 3).astype(np.float64)
    faces = payload[n_verts * 24 :].view("<u4").reshape(n_faces, 3).astype(np.int32)
    if not (faces < n_verts).all():
        raise DataError("SMESH face index out of range")
    return Icosphere(order=order, vertices=verts, faces=faces)


def write_ssig(path, signal: SurfaceSignal) -> None:
    """Write a SurfaceSignal to an SSIG file (float32 payload)."""
    names = signal.channel_names or tuple(f"ch{i}" for i in range(signal.n_channels))
    for name in names:
        if "," in name or "\n" in name or not name:
            raise DataError(f"channel name {name!r} not storable (no commas/newlines/empty)")
    with open(path, "wb") as fh:
        _write_header(
            fh,
            "SSIG",
            SSIG_VERSION,
            [
                ("vertices", str(signal.n_vertices)),
                ("channels", str(signal.n_channels)),
                ("names", ",".join(names)),
            ],
        )
        fh.write(np.ascontiguousarray(signal.values, dtype="<f4").tobytes())


def read_ssig(path) -> SurfaceSignal:
    with open(path, "rb") as fh:
        fields = _read_header(fh, "SSIG", SSIG_VERSION)
        n_verts = _header_int(fields, "vertices", "SSIG")
        n_chan = _header_int(fields, "channels", "SSIG")
        names = tuple(fields.get("names", "").split(",")) if fields.get("names") else ()
        if names and len(names) != n_chan:
            raise ParseError(f"SSIG names count {len(names)} != channels {n_chan}")
        values = _read_payload(fh, np.dtype("<f4"), n_verts * n_chan, "SSIG values")
    return SurfaceSignal(
        values=values.reshape(n_verts, n_chan).astype(np.float32),
        channel_names=names,
    )


def write_sptbl(path, table) -> None:
    """Write a PatchTable to an SPTBL file."""
    with open(path, "wb") as fh:
        _write_header(
            fh,
            "SPTBL",
            SPTBL_VERSION,
            [
                ("high_order", str(table.high_order)),
                ("patch_order", str(table.patch_order)),
                ("patches", str(table.n_patches)),
                ("verts_per_patch", str(table.verts_per_patch)),
            ],
        )
        fh.write(np.ascontiguousarray(table.patches, dtype="<u4").tobytes())


def read_sptbl(path):
    from .patching import PatchTable

    with open(path, "rb") as fh:
        fields = _read_header(fh, "SPTBL", SPTBL_VERSION)
        high = _header_int(fields, "high_order", "SPTBL")
        low = _header_int(fields, "patch_order", "SPTBL")
        n = _header_int(fields, "patches", "SPTBL")
        v = _header_int(fields, "verts_per_patch", "SPTBL")
        payload = _read_payload(fh, np.dtype("<u4"), n * v, "SPTBL indices")
    return PatchTable(high_order=high, patch_order=low, patches=payload.reshape(n, v).astype(np.int32))
