"""Input validation helpers used throughout the package."""

import numpy as np

from .errors import DimensionMismatchError

# Tolerances fixed once so every caller agrees on what "symmetric" and
# "positive semi-definite" mean numerically.
PSD_TOL = 1e-10
BORDERED_PSD_TOL = 1e-8
SIMPLEX_SUM_TOL = 1e-10
SIMPLEX_NEG_TOL = 1e-12


def as_vector(x, p=None, name="array"):
    """Coerce to a finite 1-d float array, optionally of length ``p``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be 1-dimensional, got shape {arr.shape}")
    if p is not None and arr.shape[0] != p:
        raise DimensionMismatchError(f"{name} must have length {p}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(x, shape=None, name="matrix"):
    """Coerce to a finite 2-d float array, optionally of a given shape."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise DimensionMismatchError(f"{name} must have shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_symmetric(a, name="matrix", tol=1e-8):
    """Verify near-symmetry and return the exactly symmetrised matrix."""
    a = as_matrix(a, name=name)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {a.shape}")
    if not np.allclose(a, a.T, atol=tol, rtol=0):
        raise ValueError(f"{name} is not symmetric")
    return (a + a.T) / 2.0


def check_psd(a, name="matrix", tol=PSD_TOL):
    """Verify eigenvalues >= -tol; returns the symmetrised matrix."""
    a = check_symmetric(a, name=name)
    if a.shape[0] and np.linalg.eigvalsh(a)[0] < -tol:
        raise ValueError(f"{name} is not positive semi-definite (tol={tol})")
    return a


def check_simplex(w, name="weight"):
    """Verify that ``w`` lies on the probability simplex within tolerance."""
    w = as_vector(w, name=name)
    if abs(w.sum() - 1.0) > SIMPLEX_SUM_TOL * max(1.0, w.size):
        raise ValueError(f"{name} does not sum to 1 (sum={w.sum()!r})")
    if w.min() < -SIMPLEX_NEG_TOL:
        raise ValueError(f"{name} has a negative entry ({w.min()!r})")
    return w
