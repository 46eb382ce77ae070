"""Pure numpy implementations of the histogram kernels.

The compiled ``_kernels`` extension exposes the same three functions with
identical results; this module is used when it is missing or disabled.
"""

import numpy as np


def discretize_columns(x, bins):
    """Equal-width binning of each column over its own [min, max].

    The top edge is closed, so the maximum lands in bin ``bins - 1``.
    Constant columns map to bin 0.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.zeros(x.shape, dtype=np.int64)
    for j in range(x.shape[1]):
        col = x[:, j]
        lo = col.min()
        hi = col.max()
        if hi > lo:
            idx = np.floor((col - lo) / (hi - lo) * bins).astype(np.int64)
            out[:, j] = np.minimum(idx, bins - 1)
    return out


def joint_counts(x, y, nx, ny):
    """Contingency table of two integer label vectors."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    return np.bincount(x * ny + y, minlength=nx * ny).reshape(nx, ny)


def pairwise_joint_counts(a, b, na, nb):
    """Contingency tables for every (column of ``a``, column of ``b``) pair.

    Returns an int64 array of shape ``(a_cols, b_cols, na, nb)``.
    """
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    out = np.empty((a.shape[1], b.shape[1], na, nb), dtype=np.int64)
    for j in range(a.shape[1]):
        shifted = a[:, j] * nb
        for k in range(b.shape[1]):
            out[j, k] = np.bincount(shifted + b[:, k], minlength=na * nb).reshape(na, nb)
    return out
