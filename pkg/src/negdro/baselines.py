"""Reference estimators for comparison, with their failure modes made explicit.

Pooled least squares ignores heterogeneity entirely; the gradient-matching
pair (difference-of-moments inversion and its reference-environment
regularized variant) identify the causal effect only under full
interventions, and their degeneracies under limited interventions surface
here as ``singular`` / ``non_convex`` statuses instead of garbage numbers.
The exhaustive invariance search is the brute-force subset benchmark whose
cost grows as ``2^p``.
"""

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import _validation as v
from .errors import DimensionTooLargeError, NoInvariantSubsetError, TimeoutExceededError
from .risk import pooled_moments, risk, ols, ols_subset
from .solvers import _as_moments

_SINGULAR_REL_TOL = 1e-8
_PD_TOL = 1e-10


@dataclass
class BaselineResult:
    """Estimate plus status; ``b_hat`` is present exactly when status is ``ok``."""

    b_hat: np.ndarray | None
    status: str
    diagnostics: dict = field(default_factory=dict)
    subset: tuple | None = None


def erm(data):
    """Pooled least squares across all environments (sample-size weighted)."""
    moments = _as_moments(data)
    pooled = pooled_moments(moments)
    eigs = np.linalg.eigvalsh(pooled.gram)
    if eigs[0] < _PD_TOL:
        return BaselineResult(b_hat=None, status="singular", diagnostics={"lambda_min": eigs[0]})
    return BaselineResult(
        b_hat=ols(pooled),
        status="ok",
        diagnostics={"lambda_min": float(eigs[0]), "lambda_max": float(eigs[-1])},
    )


def _dantzig_pair(moments, pairing):
    if pairing == "first_vs_rest":
        ref = moments[0]
        rest = moments[1:]
        if any(m.n is None for m in rest):
            other = pooled_moments(rest, weights=np.ones(len(rest)))
        else:
            other = pooled_moments(rest)
        return ref, other
    e, f = pairing
    return moments[e], moments[f]


def causal_dantzig(data, pairing="first_vs_rest"):
    """Invert the between-environment moment differences.

    Solves ``(G_e - G_f) b = z_e - z_f``; with additive interventions the
    causal effect satisfies this for every environment pair.  ``pairing``
    is ``"first_vs_rest"`` (environment 0 against the sample-size-weighted
    pool of the others) or an explicit index pair ``(e, f)``.  When any
    covariate is never intervened the difference matrix loses rank and the
    result is flagged ``singular``.
    """
    moments = _as_moments(data)
    m_ref, m_other = _dantzig_pair(moments, pairing)
    delta_gram = m_other.gram - m_ref.gram
    delta_cross = m_other.cross - m_ref.cross
    svals = np.linalg.svd(delta_gram, compute_uv=False)
    diagnostics = {
        "pairing": pairing if isinstance(pairing, str) else tuple(pairing),
        "sv_min": float(svals[-1]),
        "sv_max": float(svals[0]),
    }
    if svals[-1] < _SINGULAR_REL_TOL * max(svals[0], 1e-300):
        return BaselineResult(b_hat=None, status="singular", diagnostics=diagnostics)
    return BaselineResult(
        b_hat=np.linalg.solve(delta_gram, delta_cross), status="ok", diagnostics=diagnostics
    )


def drig(data, gamma, ref_env=0, weights=None, require_convex=True):
    """Reference-environment robust regression with extrapolation strength ``gamma``.

    Solves the linear system with Hessian
    ``H = G_ref + gamma * sum_e w_e (G_e - G_ref)`` over the non-reference
    environments (uniform ``weights`` by default) and matching right side.
    Without a genuinely dominated reference environment ``H`` can lose
    positive definiteness, reported as ``non_convex``.  With
    ``require_convex=False`` the linear system is still solved whenever it
    is invertible (the saddle point the method degrades to), and the lost
    definiteness is only recorded in the diagnostics; benchmark sweeps use
    this mode to chart how far the estimates drift.
    """
    moments = _as_moments(data)
    n_envs = len(moments)
    others = [e for e in range(n_envs) if e != ref_env]
    if not others:
        raise ValueError("drig needs at least one non-reference environment")
    if weights is None:
        weights = np.full(len(others), 1.0 / len(others))
    else:
        weights = v.check_simplex(weights, name="drig weights")
        if weights.size != len(others):
            raise ValueError(f"need one weight per non-reference environment ({len(others)})")
    m_ref = moments[ref_env]
    hessian = m_ref.gram.copy()
    rhs = m_ref.cross.copy()
    for w, e in zip(weights, others):
        hessian = hessian + gamma * w * (moments[e].gram - m_ref.gram)
        rhs = rhs + gamma * w * (moments[e].cross - m_ref.cross)
    eigs = np.linalg.eigvalsh(hessian)
    diagnostics = {
        "lambda_min": float(eigs[0]),
        "gamma": float(gamma),
        "ref_env": ref_env,
        "convex": bool(eigs[0] > _PD_TOL),
    }
    if eigs[0] <= _PD_TOL:
        invertible = np.abs(eigs).min() > _PD_TOL
        if require_convex or not invertible:
            return BaselineResult(b_hat=None, status="non_convex", diagnostics=diagnostics)
    return BaselineResult(b_hat=np.linalg.solve(hessian, rhs), status="ok", diagnostics=diagnostics)


def exhaustive_invariance_search(data, threshold, max_p=20, deadline=None):
    """Brute-force search for the lowest-risk subset with invariant risks.

    Fits pooled least squares on every covariate subset, keeps those whose
    per-environment risk spread stays within ``threshold``, and among them
    returns the one with the smallest pooled risk (ties: smaller subset,
    then lexicographic).  Cost doubles per covariate; ``deadline`` (a
    ``time.monotonic`` instant) aborts cooperatively.

    Raises
    ------
    DimensionTooLargeError
        If ``p`` exceeds ``max_p``.
    NoInvariantSubsetError
        If no subset meets the threshold (too tight for the sample size).
    TimeoutExceededError
        If the deadline expires mid-enumeration.
    """
    moments = _as_moments(data)
    p = moments[0].p
    if p > max_p:
        raise DimensionTooLargeError(f"exhaustive search needs p <= {max_p}, got {p}")
    pooled = pooled_moments(moments) if all(m.n is not None for m in moments) else \
        pooled_moments(moments, weights=np.ones(len(moments)))

    best = None  # (pooled_risk, size, subset, coefficients)
    checked = 0
    for r in range(p + 1):
        for subset in itertools.combinations(range(p), r):
            checked += 1
            if deadline is not None and checked % 64 == 0 and time.monotonic() > deadline:
                raise TimeoutExceededError(
                    f"exhaustive search hit its deadline after {checked} subsets"
                )
            b = ols_subset(pooled, subset)
            risks = [risk(m, b) for m in moments]
            if max(risks) - min(risks) > threshold:
                continue
            key = (risk(pooled, b), r, subset)
            if best is None or key < best[:3]:
                best = (*key, b)
    if best is None:
        raise NoInvariantSubsetError(
            f"no subset of {p} covariates has risk spread <= {threshold}"
        )
    pooled_risk, _, subset, b = best
    return BaselineResult(
        b_hat=b,
        status="ok",
        diagnostics={"pooled_risk": float(pooled_risk), "subsets_checked": checked},
        subset=subset,
    )
