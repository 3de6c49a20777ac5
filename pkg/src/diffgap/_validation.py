"""Small input-validation helpers shared across the package."""

import numpy as np


def as_points(X, name="X"):
    """Coerce to a 2D float64 array of shape (n, dim); 1D input becomes one row."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a point or an (n, dim) array, got shape {np.shape(X)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_sigma(sigma, allow_zero=False):
    sigma = float(sigma)
    if not np.isfinite(sigma):
        raise ValueError(f"sigma must be finite, got {sigma}")
    if sigma < 0 or (sigma == 0 and not allow_zero):
        raise ValueError(f"sigma must be {'>= 0' if allow_zero else '> 0'}, got {sigma}")
    return sigma


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite non-negative number, got {value}")
    return value


def check_positive_int(value, name, minimum=1):
    if int(value) != value or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value}")
    return int(value)
