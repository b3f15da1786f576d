"""SITCKPT parameter checkpoints: named float32 tensors plus a config record.

Layout: "SITCKPT 1" magic line, one "config <json>" line (compact, sorted
keys, so identical configs give identical bytes), one "tensor <name>
<d0>x<d1>..." line per tensor in insertion order, "end", then the float32
little-endian payloads concatenated in the same order.
"""

import json

import numpy as np

from ..errors import DataError, ParseError

CKPT_VERSION = 1


def save_checkpoint(path, tensors: dict, config: dict) -> None:
    """Write named tensors (Arrays or ndarrays) and a JSON-able config."""
    items = []
    for name, tensor in tensors.items():
        data = tensor.data if hasattr(tensor, "data") else np.asarray(tensor)
        if not name or any(ch.isspace() for ch in name):
            raise DataError(f"tensor name {name!r} must be non-empty without whitespace")
        if not np.isfinite(data).all():
            raise DataError(f"tensor {name!r} contains non-finite values")
        items.append((name, np.ascontiguousarray(data, dtype="<f4")))

    with open(path, "wb") as fh:
        fh.write(f"SITCKPT {CKPT_VERSION}\n".encode("ascii"))
        record = json.dumps(config, sort_keys=True, separators=(",", ":"))
        fh.write(f"config {record}\n".encode("ascii"))
        for name, data in items:
            dims = "x".join(str(d) for d in data.shape) if data.shape else "1"
            fh.write(f"tensor {name} {dims}\n".encode("ascii"))
        fh.write(b"end\n")
        for _, data in items:
            fh.write(data.tobytes())


def load_checkpoint(path) -> tuple[dict, dict]:
    """Read a checkpoint back as ({name: float32 ndarray}, config dict)."""
    with open(path, "rb") as fh:
        first = fh.readline()
        parts = first.decode("ascii", errors="replace").split()
        if len(parts) != 2 or parts[0] != "SITCKPT":
            raise ParseError(f"not a SITCKPT file (magic line {first!r})", offset=0)
        if not parts[1].isdigit() or int(parts[1]) != CKPT_VERSION:
            raise ParseError(f"unsupported SITCKPT version {parts[1]!r}", offset=8)

        config: dict | None = None
        specs: list[tuple[str, tuple[int, ...]]] = []
        while True:
            offset = fh.tell()
            line = fh.readline()
            if not line:
                raise ParseError("SITCKPT header ended before 'end'", offset=offset)
            text = line.decode("ascii", errors="replace").rstrip("\n")
            if text == "end":
                break
            if text.startswith("config "):
                try:
                    config = json.loads(text[len("config ") :])
                except json.JSONDecodeError as exc:
                    raise ParseError(f"bad config record: {exc}", offset=offset) from None
            elif text.startswith("tensor "):
                fields = text.split()
                if len(fields) != 3:
                    raise ParseError(f"malformed tensor line {text!r}", offset=offset)
                try:
                    shape = tuple(int(d) for d in fields[2].split("x"))
                except ValueError:
                    raise ParseError(f"bad tensor shape in {text!r}", offset=offset) from None
                specs.append((fields[1], shape))
            else:
                raise ParseError(f"unknown SITCKPT header line {text!r}", offset=offset)
        if config is None:
            raise ParseError("SITCKPT missing config record")

        tensors: dict[str, np.ndarray] = {}
        for name, shape in specs:
            count = int(np.prod(shape)) if shape else 1
            offset = fh.tell()
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise ParseError(
                    f"truncated payload for tensor {name!r} "
                    f"(wanted {4 * count} bytes, got {len(raw)})",
                    offset=offset,
                )
            if name in tensors:
                raise ParseError(f"duplicate tensor name {name!r}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        extra = fh.read(1)
        if extra:
            raise ParseError("trailing bytes after final tensor", offset=fh.tell() - 1)
    return tensors, config
