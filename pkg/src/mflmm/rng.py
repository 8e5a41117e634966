"""Counter-based normal streams (Philox4x64-10 + Box-Muller).

A draw is addressed by ``key = (seed, stream)`` and a counter
``(block, row, sub, 0)``; each counter yields four normals. Rows are
particles (or paths), ``sub`` is the time step, so a particle's Brownian
path does not depend on the particle count or on how the work is split.
"""
from __future__ import annotations

import numpy as np

from .kernels import get_backend

_U64 = (1 << 64) - 1


def stream_key(seed: int, stream: int = 0) -> tuple[int, int]:
    """Validate and return the two Philox key words."""
    seed, stream = int(seed), int(stream)
    if not (0 <= seed <= _U64 and 0 <= stream <= _U64):
        raise ValueError("seed and stream id must be unsigned 64-bit integers")
    return seed, stream


def normals(
    seed: int,
    stream: int,
    rows: int,
    cols: int,
    *,
    row_start: int = 0,
    sub: int = 0,
    block_start: int = 0,
    backend: str | None = None,
) -> np.ndarray:
    """Standard normals of shape (rows, cols); entry (r, j) comes from counter
    ``(block_start + j // 4, row_start + r, sub, 0)``."""
    k0, k1 = stream_key(seed, stream)
    out = np.empty((rows, cols))
    get_backend(backend).fill_normals(k0, k1, row_start, sub, block_start, out)
    return out
