"""Flat parameter checkpoints, format "tk-ckpt-1".

Layout: a text header (utf-8) followed by raw binary payloads.

    tk-ckpt-1 <n>
    <name> <d0> <d1> ...        (n lines, one per parameter)
    <payloads>                  (little-endian float32, row-major,
                                 concatenated in header order)
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import DataError

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = "tk-ckpt-1"


def save_checkpoint(params, path):
    """Write named parameters; values are stored as little-endian float32."""
    names = list(params)
    lines = [f"{MAGIC} {len(names)}"]
    payloads = []
    for name in names:
        tensor = params[name]
        data = tensor.data if isinstance(tensor, Tensor) else np.asarray(tensor)
        dims = " ".join(str(d) for d in data.shape)
        lines.append(f"{name} {dims}".rstrip())
        payloads.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint into a dict of name -> float32 ndarray."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head, _, rest = blob.partition(b"\n")
    fields = head.decode("utf-8", errors="replace").split()
    if len(fields) != 2 or fields[0] != MAGIC:
        raise DataError(f"{path}: not a {MAGIC} checkpoint")
    try:
        count = int(fields[1])
    except ValueError:
        raise DataError(f"{path}: bad parameter count in header") from None
    entries = []
    for _ in range(count):
        line, _, rest = rest.partition(b"\n")
        parts = line.decode("utf-8").split()
        if not parts:
            raise DataError(f"{path}: truncated header")
        name, dims = parts[0], tuple(int(d) for d in parts[1:])
        entries.append((name, dims))
    params = {}
    offset = 0
    for name, dims in entries:
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        nbytes = 4 * n
        chunk = rest[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise DataError(f"{path}: payload truncated at parameter {name!r}")
        params[name] = np.frombuffer(chunk, dtype="<f4").reshape(dims).copy()
        offset += nbytes
    if offset != len(rest):
        raise DataError(f"{path}: {len(rest) - offset} trailing bytes after payloads")
    return params
