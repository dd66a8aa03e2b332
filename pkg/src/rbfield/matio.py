"""On-disk formats: raw binary matrices and small CSV helpers.

Binary layout: 8-byte little-endian header (uint32 rows, uint32 cols)
followed by the row-major float64 entries.
"""

import csv

import numpy as np

_HEADER_DTYPE = np.dtype("<u4")


def write_matrix(path, a) -> None:
    a = np.ascontiguousarray(np.atleast_2d(np.asarray(a, dtype=float)))
    if a.ndim != 2:
        raise ValueError("only 2-d arrays are supported")
    with open(path, "wb") as fh:
        np.asarray(a.shape, dtype=_HEADER_DTYPE).tofile(fh)
        a.astype("<f8").tofile(fh)


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        shape = np.fromfile(fh, dtype=_HEADER_DTYPE, count=2)
        if shape.size != 2:
            raise ValueError(f"{path}: truncated header")
        rows, cols = int(shape[0]), int(shape[1])
        data = np.fromfile(fh, dtype="<f8", count=rows * cols)
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {data.size}")
    return data.reshape(rows, cols)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (np.floating,)):
        return format(float(v), ".17g")
    return v


def write_eigvals_csv(path, eigvals) -> None:
    """index,value rows for a spectrum (1-based index)."""
    write_csv(path, ["index", "value"], ((i + 1, float(v)) for i, v in enumerate(eigvals)))
