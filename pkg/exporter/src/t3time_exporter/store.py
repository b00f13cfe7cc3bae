"""T3EMB store writer (the file contract shared with the forecaster).

Layout, little-endian: magic b"T3EMB\\0", u16 version (1), u32 num_windows,
u32 num_variables, u32 dim, then float32 payload row-major over
(window, variable, dim). Bit-exact: whatever the embedder produced is what
the forecaster reads back.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"T3EMB\x00"
VERSION = 1
_HEADER = struct.Struct("<6sHIII")


class StoreError(ValueError):
    pass


@dataclass
class PromptRecord:
    window_id: int
    variable_id: int
    prompt: str
    token_count: int
    vector: np.ndarray


def write_store(records: list[PromptRecord], path: str) -> None:
    """Write records covering a dense (window, variable) grid."""
    if not records:
        raise StoreError("no records to write")
    windows = 1 + max(r.window_id for r in records)
    variables = 1 + max(r.variable_id for r in records)
    dim = len(records[0].vector)
    seen = {}
    for r in records:
        if len(r.vector) != dim:
            raise StoreError(
                f"vector dim {len(r.vector)} for ({r.window_id}, {r.variable_id}) "
                f"differs from {dim}")
        seen[(r.window_id, r.variable_id)] = r
    missing = [(w, v) for w in range(windows) for v in range(variables)
               if (w, v) not in seen]
    if missing:
        shown = ", ".join(map(str, missing[:8]))
        raise StoreError(
            f"sparse (window, variable) grid; {len(missing)} missing pairs: {shown}"
            + ("..." if len(missing) > 8 else ""))
    payload = np.empty((windows, variables, dim), dtype="<f4")
    for (w, v), r in seen.items():
        payload[w, v] = r.vector
    write_array(payload, path)


def write_array(values: np.ndarray, path: str) -> None:
    values = np.ascontiguousarray(values, dtype="<f4")
    if values.ndim != 3:
        raise StoreError(f"expected [windows, variables, dim], got {values.shape}")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, *values.shape))
        fh.write(values.tobytes())
    os.replace(tmp, path)


def checksum(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
