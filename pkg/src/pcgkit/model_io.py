"""Binary model container shared by every trainable model in the package.

Layout (all integers little-endian):

    magic   4 bytes  b"PCGM"
    version u32
    desc    u32 length + UTF-8 JSON architecture/training descriptor
    params  repeated until EOF:
              u32 name length + UTF-8 name
              u32 rank
              u32 x rank dims
              float64 x prod(dims) raw values

Loading parses the whole file before returning, so a truncated or corrupt
file never yields a partial model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError

MAGIC = b"PCGM"
VERSION = 1


@dataclass
class ModelManifest:
    """Versioned, serializable model snapshot: descriptor + named arrays."""

    descriptor: dict
    params: dict  # name -> float64 ndarray, insertion-ordered
    version: int = VERSION


def save_manifest(path, manifest: ModelManifest) -> None:
    chunks = [MAGIC, struct.pack("<I", manifest.version)]
    desc = json.dumps(manifest.descriptor, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(desc)))
    chunks.append(desc)
    for name, arr in manifest.params.items():
        arr = np.asarray(arr, dtype="<f8", order="C")  # keeps 0-d arrays rank 0
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_manifest(path) -> ModelManifest:
    blob = open(path, "rb").read()

    def take(n: int, offset: int, what: str):
        if offset + n > len(blob):
            raise FormatError(f"truncated file while reading {what}", offset=offset)
        return blob[offset: offset + n], offset + n

    raw, pos = take(4, 0, "magic")
    if raw != MAGIC:
        raise FormatError(f"bad magic {raw!r}, expected {MAGIC!r}", offset=0)
    raw, pos = take(4, pos, "version")
    version = struct.unpack("<I", raw)[0]
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} (supported: {VERSION})",
                          offset=4)
    raw, pos = take(4, pos, "descriptor length")
    desc_len = struct.unpack("<I", raw)[0]
    raw, pos = take(desc_len, pos, "descriptor")
    try:
        descriptor = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"descriptor is not valid JSON: {exc}", offset=pos - desc_len)

    params = {}
    while pos < len(blob):
        raw, pos = take(4, pos, "parameter name length")
        name_len = struct.unpack("<I", raw)[0]
        raw, pos = take(name_len, pos, "parameter name")
        name = raw.decode("utf-8")
        raw, pos = take(4, pos, "parameter rank")
        rank = struct.unpack("<I", raw)[0]
        raw, pos = take(4 * rank, pos, f"dims of {name!r}")
        dims = struct.unpack(f"<{rank}I", raw)
        count = int(np.prod(dims)) if rank else 1
        raw, pos = take(8 * count, pos, f"data of {name!r}")
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    return ModelManifest(descriptor=descriptor, params=params, version=version)


def assign_parameters(params, manifest: ModelManifest) -> None:
    """Copy manifest arrays into live Parameters, strictly matching names/shapes."""
    live = {p.name: p for p in params}
    if set(live) != set(manifest.params):
        missing = sorted(set(live) - set(manifest.params))
        extra = sorted(set(manifest.params) - set(live))
        raise FormatError(f"parameter names mismatch: missing {missing}, unexpected {extra}")
    for name, p in live.items():
        arr = manifest.params[name]
        if arr.shape != p.data.shape:
            raise FormatError(
                f"parameter {name!r} has shape {arr.shape}, model expects {p.data.shape}")
        p.data = arr.copy()
