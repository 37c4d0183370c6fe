"""Binary embedding snapshot format shared by all pipeline stages.

Layout (little-endian): magic ``NBE1``, u32 node_count, u32 dim,
u8 measure code (0 = dot, 1 = cosine), then row-major float32 values.
In-memory tables are float64; writing narrows to float32, reading
promotes back so score comparisons stay in 64-bit.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .graph_embed import EmbeddingTable

MAGIC = b"NBE1"
_MEASURE_CODES = {"dot": 0, "cosine": 1}
_CODE_MEASURES = {v: k for k, v in _MEASURE_CODES.items()}


def write_snapshot(t: EmbeddingTable, path: str | Path) -> None:
    """Write a table to the NBE1 binary format."""
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIB", t.rows, t.dim, _MEASURE_CODES[t.measure]))
        fh.write(np.ascontiguousarray(t.values, dtype="<f4").tobytes())


def read_snapshot(path: str | Path) -> EmbeddingTable:
    """Read an NBE1 snapshot, promoting values to float64."""
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        header = fh.read(9)
        if len(header) != 9:
            raise DataError(f"{path}: truncated header")
        rows, dim, code = struct.unpack("<IIB", header)
        if code not in _CODE_MEASURES:
            raise DataError(f"{path}: unknown measure code {code}")
        payload = fh.read()
    expected = rows * dim * 4
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    values = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    return EmbeddingTable(
        values=values.astype(np.float64), measure=_CODE_MEASURES[code]
    )
