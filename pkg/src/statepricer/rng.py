"""Reproducible Gaussian increments for path simulation.

Every path owns a Philox substream derived from (seed, path index) by a
2**128 jump, so the draws for path i are a pure function of (seed, i):
bit-identical whether the path is simulated alone, inside any batch, split
across chunks, or spread over worker threads. Within a path, normals are
consumed in (step, driver) row-major order.
"""

from __future__ import annotations

import numpy as np
from numpy.random import Generator, Philox


def normal_increments(seed: int, path_offset: int, n_paths: int,
                      n_steps: int, n_drivers: int) -> np.ndarray:
    """Standard-normal draws, shape (n_paths, n_steps, n_drivers).

    Row i holds the draws of logical path ``path_offset + i``.
    """
    if n_paths < 0 or path_offset < 0:
        raise ValueError("n_paths and path_offset must be non-negative")
    out = np.empty((n_paths, n_steps, n_drivers))
    base = Philox(key=int(seed))
    flat = out.reshape(n_paths, n_steps * n_drivers)
    for i in range(n_paths):
        flat[i] = Generator(base.jumped(path_offset + i)).standard_normal(
            n_steps * n_drivers)
    return out
