"""Binary array files: one ASCII header line, then little-endian float64 data.

Header is ``f64le <dim0> [<dim1> ...]`` followed by a newline; the payload is
the raw row-major buffer. The format is deliberately minimal so vectors and
matrices written on any platform read back bit-identically.
"""

import numpy as np

from .errors import IoError

_MAGIC = b"f64le"


def write_array(path, arr):
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    header = _MAGIC + b" " + " ".join(str(d) for d in a.shape).encode("ascii") + b"\n"
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(a.tobytes())


def read_array(path):
    try:
        with open(path, "rb") as fh:
            header = fh.readline()
            payload = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read array file {path}: {exc}") from exc
    parts = header.split()
    if not parts or parts[0] != _MAGIC:
        raise IoError(f"{path}: bad array header {header!r}")
    try:
        shape = tuple(int(p) for p in parts[1:])
    except ValueError as exc:
        raise IoError(f"{path}: bad dimensions in header {header!r}") from exc
    count = int(np.prod(shape)) if shape else 0
    if len(payload) != 8 * count:
        raise IoError(
            f"{path}: expected {8 * count} payload bytes for shape {shape}, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f8", count=count)
    return data.reshape(shape).astype(np.float64)
