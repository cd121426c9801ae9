"""Field binaries, CSV tables and key-value run manifests."""

import csv
import os
import struct
import tempfile

import numpy as np

from .heat import Field, Grid

MAGIC = b"HHFIELD1"
HEADER_SIZE = 64
_HEADER = struct.Struct("<8sqqd")


def write_field(path, field):
    """Little-endian float64 values, row-major, after a 64-byte header (magic, N, M, L)."""
    g = field.grid
    header = _HEADER.pack(MAGIC, g.dimension, g.points, g.half_width)
    header += b"\0" * (HEADER_SIZE - len(header))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C"))


def read_field(path):
    with open(path, "rb") as fh:
        header = fh.read(HEADER_SIZE)
        if len(header) != HEADER_SIZE:
            raise ValueError(f"{path}: truncated header")
        magic, N, M, L = _HEADER.unpack_from(header)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        grid = Grid(N, L, M)
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != M**N:
        raise ValueError(f"{path}: expected {M**N} values, found {data.size}")
    return Field(grid, data.reshape(grid.shape).astype(float))


def write_field_csv(path, field):
    """Slice through the origin along the first axis as (x, value) rows."""
    g = field.grid
    centre = (g.points // 2,) * (g.dimension - 1)
    values = field.values[(slice(None),) + centre]
    write_csv(path, ["x", "value"], zip(g.axis(), values))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(path, entries):
    """Atomic write of ``key = value`` lines (temp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest.")
    try:
        with os.fdopen(fd, "w") as fh:
            for key, value in entries.items():
                text = _fmt(value).replace("\n", " | ")
                fh.write(f"{key} = {text}\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
