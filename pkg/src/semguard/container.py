"""Versioned binary container for checkpoints and baseline statistics.

Layout::

    b"SGRD"                    4-byte magic
    uint32 LE                  container version
    uint32 LE                  header length H
    H bytes                    UTF-8 JSON header: kind, meta, array table
    raw arrays                 little-endian float64, C order, in table order

The JSON header is written with sorted keys so identical contents give
identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from semguard.errors import DataError, IoFailure

MAGIC = b"SGRD"
VERSION = 1


def dump(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    table = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    header = json.dumps({"kind": kind, "meta": meta, "arrays": table}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(header)) + header)
        for v in arrays.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load(path: str | Path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise DataError(f"{path} is not a semguard container")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    header = json.loads(blob[12 : 12 + hlen])
    if header["kind"] != kind:
        raise DataError(f"{path} holds a {header['kind']!r}, expected {kind!r}")
    offset = 12 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(blob):
            raise DataError(f"{path}: truncated array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    return header["meta"], arrays


def write_text_atomic(path: str | Path, text: str) -> Path:
    """Write via a sibling temp file so a failed run never leaves a partial file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return path
