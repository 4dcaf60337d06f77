"""Small input-validation helpers used by the estimators and loaders."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError


def check_nonempty(seq: Sequence | Iterable, name: str):
    """Materialize *seq* as a list and require at least one element."""
    items = list(seq)
    if not items:
        raise InvalidInputError(f"{name} must be non-empty")
    return items


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise InvalidInputError(f"{name} must be positive, got {value!r}")
    return float(value)


def check_probabilities(probs: dict, name: str, atol: float = 1e-9) -> dict:
    """Require a dict of non-negative weights summing to 1."""
    total = float(sum(probs.values()))
    if any(p < 0 for p in probs.values()) or abs(total - 1.0) > atol:
        raise InvalidInputError(f"{name} must be probabilities summing to 1, got {probs!r}")
    return probs


def as_float_vector(values, name: str) -> np.ndarray:
    """Coerce to a 1-d float64 array, rejecting empties and non-finite values."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size == 0:
        raise InvalidInputError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def as_design_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a 2-d float64 array of regressors."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise InvalidInputError(f"{name} has no rows")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_consistent_length(n: int, *arrays, names: str = "arrays") -> None:
    for arr in arrays:
        if arr is not None and len(arr) != n:
            raise InvalidInputError(
                f"{names} have inconsistent lengths: expected {n}, got {len(arr)}"
            )
