# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled histogram kernels (see ``_kernels_py`` for the reference versions)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def discretize_columns(x, Py_ssize_t bins):
    # work on a transposed copy so every column is a contiguous run
    cdef cnp.ndarray[cnp.float64_t, ndim=2] arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64).T)
    cdef Py_ssize_t n = arr.shape[0], s = arr.shape[1], i, j
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.zeros((n, s), dtype=np.int64)
    cdef double lo, hi, width, v
    cdef cnp.int64_t idx
    for j in range(n):
        lo = arr[j, 0]
        hi = arr[j, 0]
        for i in range(1, s):
            v = arr[j, i]
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if not hi > lo:
            continue
        width = hi - lo
        for i in range(s):
            idx = <cnp.int64_t>floor((arr[j, i] - lo) / width * bins)
            if idx > bins - 1:
                idx = bins - 1
            out[j, i] = idx
    return out.T.copy()


def joint_counts(x, y, Py_ssize_t nx, Py_ssize_t ny):
    cdef cnp.ndarray[cnp.int64_t, ndim=1] xa = np.ascontiguousarray(x, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] ya = np.ascontiguousarray(y, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out = np.zeros((nx, ny), dtype=np.int64)
    cdef Py_ssize_t i
    for i in range(xa.shape[0]):
        out[xa[i], ya[i]] += 1
    return out


def pairwise_joint_counts(a, b, Py_ssize_t na, Py_ssize_t nb):
    # column-major copies keep each inner loop on two contiguous label runs
    cdef cnp.ndarray[cnp.int64_t, ndim=2] aa = np.ascontiguousarray(np.asarray(a, dtype=np.int64).T)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] ba = np.ascontiguousarray(np.asarray(b, dtype=np.int64).T)
    cdef Py_ssize_t n = aa.shape[0], k = ba.shape[0], s = aa.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=4] out = np.zeros((n, k, na, nb), dtype=np.int64)
    cdef Py_ssize_t i, j, f
    for j in range(n):
        for f in range(k):
            for i in range(s):
                out[j, f, aa[j, i], ba[f, i]] += 1
    return out
