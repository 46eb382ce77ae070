"""Disentanglement metrics: discrete mutual information, MIG and DCI."""

from __future__ import annotations

import logging
import math
import warnings
from typing import Optional

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from . import kernels
from .errors import InputError, MetricError

log = logging.getLogger(__name__)


def discretize(column, bins: int) -> np.ndarray:
    """Equal-width bin indices over ``[min, max]`` of ``column``."""
    if bins < 2:
        raise InputError("bins must be >= 2")
    col = np.asarray(column, dtype=np.float64).reshape(-1, 1)
    if col.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return kernels.discretize_columns(col, bins)[:, 0]


def _entropy_from_counts(counts) -> float:
    # sorted summation makes the result independent of table orientation
    c = np.sort(np.asarray(counts, dtype=np.float64).ravel())
    c = c[c > 0]
    total = c.sum()
    p = c / total
    return float(-np.sum(p * np.log(p)))


def _labels(x) -> tuple:
    x = np.asarray(x)
    if x.ndim != 1:
        raise InputError("expected a 1-D label vector")
    if x.size == 0:
        raise InputError("mutual information of empty inputs is undefined")
    values, inverse = np.unique(x, return_inverse=True)
    return inverse.astype(np.int64), len(values)


def _mi_from_table(table) -> float:
    table = np.asarray(table)
    hx = _entropy_from_counts(table.sum(axis=1))
    hy = _entropy_from_counts(table.sum(axis=0))
    hxy = _entropy_from_counts(table)
    return max(0.0, (hx + hy) - hxy)


def mutual_info_discrete(x, y) -> float:
    """Plug-in mutual information (nats) between two discrete label vectors."""
    xi, nx = _labels(x)
    yi, ny = _labels(y)
    if xi.shape != yi.shape:
        raise InputError("label vectors must have equal length")
    return _mi_from_table(kernels.joint_counts(xi, yi, nx, ny))


def discrete_entropy(x) -> float:
    xi, nx = _labels(x)
    return _entropy_from_counts(np.bincount(xi, minlength=nx))


def discretize_factors(factors, bins: int) -> np.ndarray:
    """Label-encode factor columns with at most ``bins`` distinct values, bin the rest."""
    factors = np.asarray(factors, dtype=np.float64)
    out = np.empty(factors.shape, dtype=np.int64)
    for k in range(factors.shape[1]):
        values, inverse = np.unique(factors[:, k], return_inverse=True)
        if len(values) <= bins:
            out[:, k] = inverse
        else:
            out[:, k] = kernels.discretize_columns(factors[:, k:k + 1], bins)[:, 0]
    return out


def _check_aligned(codes, factors):
    codes = np.asarray(codes, dtype=np.float64)
    factors = np.asarray(factors, dtype=np.float64)
    if codes.ndim != 2 or factors.ndim != 2:
        raise InputError("codes and factors must be 2-D (samples x dims)")
    if codes.shape[0] != factors.shape[0]:
        raise InputError("codes and factors must be aligned row-for-row")
    if codes.shape[0] < 2:
        raise InputError("need at least two samples")
    if not (np.all(np.isfinite(codes)) and np.all(np.isfinite(factors))):
        raise InputError("codes and factors must be finite")
    return codes, factors


def mutual_info_matrix(codes, factors, bins: int = 20) -> np.ndarray:
    """``(n, K)`` matrix of ``I(code_j; factor_k)`` after discretization."""
    codes, factors = _check_aligned(codes, factors)
    cb = kernels.discretize_columns(codes, bins)
    fb = discretize_factors(factors, bins)
    tables = kernels.pairwise_joint_counts(cb, fb, bins, int(fb.max()) + 1)
    n, k = tables.shape[:2]
    return np.array([[_mi_from_table(tables[j, f]) for f in range(k)] for j in range(n)])


def mig_details(codes, factors, bins: int = 20) -> dict:
    """MIG plus the intermediate quantities (per-factor gaps, MI matrix, entropies)."""
    codes, factors = _check_aligned(codes, factors)
    mi = mutual_info_matrix(codes, factors, bins)
    fb = discretize_factors(factors, bins)
    entropies = np.array([_entropy_from_counts(np.bincount(fb[:, k])) for k in range(fb.shape[1])])
    per_factor = []
    for k in range(factors.shape[1]):
        if entropies[k] <= 0:
            warnings.warn(f"factor {k} has zero entropy and is excluded from MIG", RuntimeWarning)
            per_factor.append(None)
            continue
        ranked = np.sort(mi[:, k])[::-1]
        second = ranked[1] if len(ranked) > 1 else 0.0
        per_factor.append(float((ranked[0] - second) / entropies[k]))
    used = [v for v in per_factor if v is not None]
    if not used:
        raise MetricError("every factor has zero entropy; MIG is undefined")
    return {
        "mig": float(np.mean(used)),
        "per_factor": per_factor,
        "mutual_info": mi,
        "factor_entropy": entropies,
    }


def mig(codes, factors, bins: int = 20) -> float:
    """Mutual Information Gap averaged over factors, in [0, 1]."""
    return mig_details(codes, factors, bins)["mig"]


def dci_importance(
    codes,
    factors,
    n_estimators: int = 10,
    max_depth: Optional[int] = 8,
    seed: int = 0,
) -> np.ndarray:
    """``(n, K)`` importance matrix from one random-forest regressor per factor.

    Column ``k`` holds the impurity-based feature importances of the forest
    predicting factor ``k`` from all code dimensions. Code columns are put in
    a content-defined order before fitting, so permuting them permutes the
    rows of the result and nothing else.
    """
    codes, factors = _check_aligned(codes, factors)
    n, k = codes.shape[1], factors.shape[1]
    order = np.lexsort(codes[::-1])
    codes = np.ascontiguousarray(codes[:, order])
    importance = np.zeros((n, k))
    for f in range(k):
        target = factors[:, f]
        if np.ptp(target) == 0:
            continue
        forest = RandomForestRegressor(
            n_estimators=n_estimators, max_depth=max_depth, random_state=seed, n_jobs=1
        )
        try:
            forest.fit(codes, target)
        except ValueError as exc:
            raise MetricError(f"importance regressor failed on factor {f}: {exc}") from exc
        importance[order, f] = np.abs(forest.feature_importances_)
    return importance


def dci_disentanglement(importance) -> float:
    """Importance-weighted mean of ``1 - H_K(row)`` over code dimensions."""
    r = np.asarray(importance, dtype=np.float64)
    if r.ndim != 2 or np.any(r < 0) or not np.all(np.isfinite(r)):
        raise InputError("importance matrix must be a finite, non-negative 2-D array")
    total = r.sum()
    if total <= 0:
        raise MetricError("importance matrix is all zero")
    k = r.shape[1]
    row_sums = r.sum(axis=1)
    score = 0.0
    for j in np.nonzero(row_sums > 0)[0]:
        if k == 1:
            d_j = 1.0
        else:
            p = r[j] / row_sums[j]
            p = p[p > 0]
            d_j = 1.0 - float(-np.sum(p * np.log(p)) / math.log(k))
        score += row_sums[j] / total * d_j
    return float(min(max(score, 0.0), 1.0))


def dci(codes, factors, n_estimators: int = 10, max_depth: Optional[int] = 8, seed: int = 0) -> float:
    return dci_disentanglement(dci_importance(codes, factors, n_estimators, max_depth, seed))
