"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length


def check_positive(a, name: str = "array") -> np.ndarray:
    a = check_array(a, ensure_2d=False, dtype=float)
    if np.any(a <= 0):
        raise ValueError(f"{name} must be strictly positive")
    return a


def check_panel_xy(X, y, groups):
    """Validate a stacked panel design; returns ``(X, y, groups)`` arrays.

    ``groups`` labels the entity of every row and may hold any hashable
    values.
    """
    X = check_array(X, dtype=float, ensure_2d=False)
    if X.ndim == 1:
        X = X[:, None]
    y = check_array(y, dtype=float, ensure_2d=False).ravel()
    if groups is None:
        raise ValueError("groups (entity labels) are required for panel estimators")
    groups = np.asarray(groups)
    check_consistent_length(X, y, groups)
    return X, y, groups


def check_quantiles(quantiles) -> np.ndarray:
    q = np.atleast_1d(np.asarray(quantiles, dtype=float))
    if q.size == 0 or np.any((q <= 0) | (q >= 1)):
        raise ValueError(f"quantiles must lie strictly inside (0, 1), got {q.tolist()}")
    return q
