"""Input validation helpers shared by the estimators and the numerical kernels."""
import numpy as np


def check_stochastic_rows(p, tol=1e-12, name="matrix"):
    p = np.asarray(p, dtype=float)
    if p.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {p.shape}")
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError(f"{name} has entries outside [0, 1]")
    err = np.abs(p.sum(axis=1) - 1.0)
    if np.any(err > tol):
        bad = int(np.argmax(err))
        raise ValueError(f"{name} row {bad} sums to {p[bad].sum()!r}, not 1")
    return p


def check_unit_interval(x, name):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {x}")
    return float(x)


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")
    return arr


def check_length(vec, n, name):
    vec = np.asarray(vec, dtype=float)
    if vec.shape[0] != n:
        raise ValueError(f"{name} has length {vec.shape[0]}, expected {n}")
    return vec
