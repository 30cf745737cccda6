"""Binary grid files.

Layout (little-endian): a 16-byte header made of the magic b"LCG1", uint32 nx,
uint32 ny and float32 half-width L, followed by one or more channels of
float64 samples in row-major (ny, nx) order. Samples sit on the nodes
x_i = -L + 2 L i / (nx - 1), likewise in y. The channel count is implied by
the file size.
"""
import struct

import numpy as np

from .errors import ValidationError

MAGIC = b"LCG1"
_HEADER = struct.Struct("<4sIIf")


def write_grid(path, channels, half_width):
    arr = np.asarray(channels, dtype="<f8")
    if arr.ndim == 2:
        arr = arr[None]
    _, ny, nx = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, nx, ny, float(half_width)))
        fh.write(arr.tobytes())


def read_grid(path):
    """Return (channels array of shape (k, ny, nx), half-width)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValidationError(f"{path}: truncated header")
        magic, nx, ny, L = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if nx == 0 or ny == 0 or data.size % (nx * ny):
        raise ValidationError(f"{path}: payload size does not match {nx}x{ny}")
    return data.reshape(-1, ny, nx).astype(float), float(L)
