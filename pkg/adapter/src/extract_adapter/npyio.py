"""Minimal deterministic NPY 1.0 writer.

The inference engine consumes plain NPY files; this adapter deliberately
does not import it, so the few lines of serialization live here.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_MAGIC = b"\x93NUMPY\x01\x00"
_DESCR = {
    np.dtype(np.float32): "<f4",
    np.dtype(np.uint8): "|u1",
    np.dtype(np.int32): "<i4",
}


def write_npy(path: str | Path, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _DESCR:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    header = "{'descr': '%s', 'fortran_order': False, 'shape': %s, }" % (
        _DESCR[arr.dtype],
        repr(arr.shape),
    )
    unpadded = len(_MAGIC) + 2 + len(header) + 1
    header = header + " " * (-unpadded % 64) + "\n"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<H", len(header)))
        fh.write(header.encode("ascii"))
        fh.write(arr.tobytes())
