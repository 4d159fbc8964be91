"""Binary interchange formats for dense matrices and sparse graphs.

Dense matrix file::

    b"EGRAF1" | rows:u64 | cols:u64 | rows*cols float32, row-major

Graph file::

    b"EGRAG1" | n:u64 | nnz:u64 | nnz * (row:u64, col:u64, weight:f32)

All integers and floats are little-endian. Graph triplets are sorted by row,
then col, so identical graphs serialize to identical bytes.
"""

import hashlib
import os
import struct

import numpy as np
import scipy.sparse as sp

from egra.errors import DataError, ShapeError

FEATURE_MAGIC = b"EGRAF1"
GRAPH_MAGIC = b"EGRAG1"

_HEADER = struct.Struct("<QQ")
_TRIPLET = np.dtype([("row", "<u8"), ("col", "<u8"), ("weight", "<f4")])


def write_matrix(path, matrix):
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {matrix.shape}")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(_HEADER.pack(*matrix.shape))
        fh.write(matrix.tobytes())


def read_matrix(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != FEATURE_MAGIC:
        raise DataError(f"{path}: not a feature file (bad magic)")
    rows, cols = _HEADER.unpack_from(blob, 6)
    payload = blob[6 + _HEADER.size:]
    if len(payload) != rows * cols * 4:
        raise DataError(
            f"{path}: payload holds {len(payload)} bytes, header promises {rows}x{cols} float32"
        )
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)


def write_graph(path, adj):
    coo = sp.coo_matrix(adj)
    if coo.shape[0] != coo.shape[1]:
        raise ShapeError(f"graph must be square, got {coo.shape}")
    coo.sum_duplicates()
    order = np.lexsort((coo.col, coo.row))
    rec = np.empty(coo.nnz, dtype=_TRIPLET)
    rec["row"] = coo.row[order]
    rec["col"] = coo.col[order]
    rec["weight"] = coo.data[order]
    with open(path, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(_HEADER.pack(coo.shape[0], coo.nnz))
        fh.write(rec.tobytes())


def read_graph(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:6] != GRAPH_MAGIC:
        raise DataError(f"{path}: not a graph file (bad magic)")
    n, nnz = _HEADER.unpack_from(blob, 6)
    payload = blob[6 + _HEADER.size:]
    if len(payload) != nnz * _TRIPLET.itemsize:
        raise DataError(f"{path}: truncated graph payload")
    rec = np.frombuffer(payload, dtype=_TRIPLET)
    return sp.csr_matrix(
        (rec["weight"].astype(np.float32), (rec["row"].astype(np.int64), rec["col"].astype(np.int64))),
        shape=(n, n),
    )


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
