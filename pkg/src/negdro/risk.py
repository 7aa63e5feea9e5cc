"""Squared-loss risks, gradients and smoothness bounds from sufficient statistics.

Solvers never touch raw samples: every risk evaluation runs on per-environment
second moments, so one iteration costs O(p^2) regardless of sample size.
"""

from dataclasses import dataclass

import numpy as np

from . import _validation as v
from .errors import DimensionMismatchError


@dataclass(frozen=True)
class EnvMoments:
    """Sufficient statistics of one environment.

    ``gram = E[X X^T]``, ``cross = E[X Y]``, ``ysq = E[Y^2]``; ``n`` is the
    sample count behind empirical moments, or ``None`` for population values.
    The bordered matrix ``[[ysq, cross^T], [cross, gram]]`` must be PSD up
    to -1e-8, which is what makes every risk non-negative.
    """

    gram: np.ndarray
    cross: np.ndarray
    ysq: float
    n: int | None = None

    def __post_init__(self):
        gram = v.check_symmetric(self.gram, name="gram")
        p = gram.shape[0]
        cross = v.as_vector(self.cross, p=p, name="cross")
        ysq = float(self.ysq)
        if ysq < 0:
            raise ValueError("ysq must be non-negative")
        bordered = np.zeros((p + 1, p + 1))
        bordered[0, 0] = ysq
        bordered[0, 1:] = cross
        bordered[1:, 0] = cross
        bordered[1:, 1:] = gram
        if np.linalg.eigvalsh(bordered)[0] < -v.BORDERED_PSD_TOL * max(1.0, ysq):
            raise ValueError("bordered moment matrix is not PSD")
        object.__setattr__(self, "gram", gram)
        object.__setattr__(self, "cross", cross)
        object.__setattr__(self, "ysq", ysq)
        if self.n is not None:
            object.__setattr__(self, "n", int(self.n))

    @property
    def p(self):
        return self.gram.shape[0]


def env_moments(data):
    """Empirical sufficient statistics of one environment's samples."""
    n = data.n
    return EnvMoments(
        gram=data.x.T @ data.x / n,
        cross=data.x.T @ data.y / n,
        ysq=float(data.y @ data.y / n),
        n=n,
    )


def _check_b(m, b):
    b = np.asarray(b, dtype=float)
    if b.shape != (m.p,):
        raise DimensionMismatchError(f"coefficient vector must have shape ({m.p},), got {b.shape}")
    return b


def risk(m, b):
    """Squared-error risk ``E[(Y - b^T X)^2]`` from moments."""
    b = _check_b(m, b)
    return float(m.ysq - 2.0 * b @ m.cross + b @ m.gram @ b)


def risk_gradient(m, b):
    """Gradient ``2 (gram @ b - cross)`` of the squared-error risk."""
    b = _check_b(m, b)
    return 2.0 * (m.gram @ b - m.cross)


def pooled_moments(moments, weights=None):
    """Sample-size-weighted average of per-environment statistics.

    ``weights`` defaults to each environment's ``n``; population moments
    (``n=None``) require explicit weights.
    """
    moments = list(moments)
    if not moments:
        raise ValueError("no moments to pool")
    if weights is None:
        if any(m.n is None for m in moments):
            raise ValueError("population moments need explicit pooling weights")
        weights = np.array([m.n for m in moments], dtype=float)
    else:
        weights = v.as_vector(weights, p=len(moments), name="weights")
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("pooling weights must be non-negative with positive sum")
    weights = weights / weights.sum()
    gram = sum(w * m.gram for w, m in zip(weights, moments))
    cross = sum(w * m.cross for w, m in zip(weights, moments))
    ysq = sum(w * m.ysq for w, m in zip(weights, moments))
    n_total = None
    if all(m.n is not None for m in moments):
        n_total = int(sum(m.n for m in moments))
    return EnvMoments(gram=gram, cross=cross, ysq=ysq, n=n_total)


def smoothness_constant(moments):
    """Uniform gradient-Lipschitz constant: twice the largest gram eigenvalue."""
    return 2.0 * max(float(np.linalg.eigvalsh(m.gram)[-1]) for m in moments)


def ols(m):
    """Least-squares coefficients ``gram^{-1} cross`` for one set of moments."""
    return np.linalg.solve(m.gram, m.cross)


def ols_subset(m, subset):
    """Least-squares coefficients restricted to a covariate subset, embedded in R^p.

    An empty subset yields the zero vector.
    """
    b = np.zeros(m.p)
    subset = np.asarray(subset, dtype=int)
    if subset.size:
        sub_gram = m.gram[np.ix_(subset, subset)]
        b[subset] = np.linalg.solve(sub_gram, m.cross[subset])
    return b
