"""Identification checks: when do invariant prediction models pin down the causal effect.

The central object is the heterogeneity matrix

    A(w) = sum_e (w_e - 1/E) * D_e,      D_e = E[delta_e delta_e^T],

the gap between a ``w``-weighted average of intervention strengths and their
plain average.  Identification holds when some simplex weight makes ``A(w)``
positive definite; a relaxed variant only needs positive definiteness on the
outcome's direct children while staying PSD overall.  Both checkers consume
declared intervention second moments (design-time knowledge), not estimates.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from . import _validation as v
from .errors import DimensionMismatchError, DimensionTooLargeError, EmptyChildSetError
from .model import population_moments
from .risk import risk, ols_subset
from .solvers import project_simplex

_MAX_PROBE_DIM = 20
_INVARIANCE_TOL = 1e-8


@dataclass(frozen=True)
class InterventionMoments:
    """Per-environment intervention second moments ``E[delta delta^T]``."""

    d_mats: np.ndarray

    def __post_init__(self):
        mats = np.asarray(self.d_mats, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise DimensionMismatchError(
                f"d_mats must stack square matrices, got shape {mats.shape}"
            )
        for e in range(mats.shape[0]):
            mats[e] = v.check_psd(mats[e], name=f"d_mats[{e}]")
        object.__setattr__(self, "d_mats", mats)

    @classmethod
    def from_scenario(cls, scenario):
        return cls(np.stack([env.intervention.second_moment() for env in scenario.environments]))

    @property
    def n_envs(self):
        return self.d_mats.shape[0]

    @property
    def p(self):
        return self.d_mats.shape[1]


@dataclass(frozen=True)
class IdCertificate:
    """Outcome of an identification check.

    ``feasible`` iff ``lambda_hat > tol`` where ``lambda_hat`` is the best
    smallest-eigenvalue value found and ``w_hat`` the weight achieving it.
    An infeasible certificate is a valid answer, not an error.
    """

    feasible: bool
    lambda_hat: float
    w_hat: np.ndarray
    tol: float

    def to_dict(self):
        return {
            "feasible": bool(self.feasible),
            "lambda_hat": float(self.lambda_hat),
            "w_hat": [float(x) for x in self.w_hat],
            "tol": float(self.tol),
        }


def a_matrix(w, im):
    """Heterogeneity matrix ``A(w)`` for a simplex weight ``w``."""
    w = v.check_simplex(w)
    if w.size != im.n_envs:
        raise DimensionMismatchError(f"weight length {w.size} != {im.n_envs} environments")
    coeff = w - 1.0 / im.n_envs
    return np.einsum("e,eij->ij", coeff, im.d_mats)


def _lambda_min(mat):
    vals, vecs = np.linalg.eigh(mat)
    return float(vals[0]), vecs[:, 0]


def _refine_simplex_max(score, w0, value0, scale=0.02, rounds=40):
    """Greedy polish of a concave score over the simplex.

    Tries single-coordinate perturbations (projected back) and exact pairwise
    mass transfers, keeping improvements and halving the scale when a sweep
    stalls; sharpens supergradient-ascent output near nonsmooth eigenvalue
    ties down to ~1e-7 in the weight.
    """
    best_w, best_val = w0.copy(), value0
    n = w0.size
    for _ in range(rounds):
        improved = False
        candidates = []
        for e in range(n):
            for sign in (1.0, -1.0):
                w = best_w.copy()
                w[e] += sign * scale
                candidates.append(project_simplex(w))
        for i in range(n):
            for j in range(n):
                if i != j and best_w[j] >= scale:
                    w = best_w.copy()
                    w[i] += scale
                    w[j] -= scale
                    candidates.append(w)
        for w in candidates:
            val = score(w)
            if val > best_val:
                best_val, best_w = val, w
                improved = True
        if not improved:
            scale /= 2.0
            if scale < 1e-9:
                break
    return best_w, best_val


def check_condition_heterogeneity(im, tol=1e-6, iters=500):
    """Maximize ``lambda_min(A(w))`` over the simplex by supergradient ascent.

    ``g(w) = lambda_min(A(w))`` is concave, so projected supergradient ascent
    (component ``v^T D_e v`` for a unit minimal eigenvector ``v``) from every
    vertex plus the barycenter, followed by a coordinate polish, finds the
    global value.  Feasible iff the best value exceeds ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n_envs = im.n_envs
    starts = [np.full(n_envs, 1.0 / n_envs)]
    for e in range(n_envs):
        vertex = np.zeros(n_envs)
        vertex[e] = 1.0
        starts.append(vertex)

    best_val, best_w = -np.inf, starts[0]
    for w0 in starts:
        w = w0.copy()
        for t in range(iters):
            val, vec = _lambda_min(a_matrix(w, im))
            if val > best_val:
                best_val, best_w = val, w.copy()
            grad = np.einsum("i,eij,j->e", vec, im.d_mats, vec)
            w = project_simplex(w + grad / np.sqrt(t + 1.0))
        val, _ = _lambda_min(a_matrix(w, im))
        if val > best_val:
            best_val, best_w = val, w.copy()
    best_w, best_val = _refine_simplex_max(
        lambda w: _lambda_min(a_matrix(w, im))[0], best_w, best_val
    )
    return IdCertificate(feasible=best_val > tol, lambda_hat=best_val, w_hat=best_w, tol=tol)


def _simplex_grid(n_envs, step):
    """All simplex points on a grid with the given step."""
    ticks = int(round(1.0 / step))
    out = []
    for combo in itertools.combinations_with_replacement(range(n_envs), ticks):
        w = np.zeros(n_envs)
        for ix in combo:
            w[ix] += step
        out.append(w)
    return out


def _relaxed_score(w, im, children, eps_stack, tol):
    """Smallest margin over the three clauses of the relaxed condition."""
    a_mat = a_matrix(w, im)
    noise_min = float(np.linalg.eigvalsh(np.einsum("e,eij->ij", w, eps_stack))[0])
    whole_min = float(np.linalg.eigvalsh(a_mat)[0])
    child_min = float(np.linalg.eigvalsh(a_mat[np.ix_(children, children)])[0])
    return min(noise_min - tol, whole_min + tol, child_min - tol), child_min


def check_condition_relaxed(im, children, eps_cov, tol=1e-6):
    """Search for a weight certifying the limited-intervention condition.

    Requires simultaneously, for some simplex ``w``: the weighted covariate
    noise ``sum_e w_e eps_cov_e`` strictly positive definite, ``A(w)`` PSD up
    to ``-tol``, and the child block ``A(w)[children, children]`` strictly
    positive definite.  Searched on a simplex grid (step 0.02 for up to four
    environments, coarser above) with local refinement around the best point.
    ``lambda_hat`` reports the child-block smallest eigenvalue.
    """
    children = np.asarray(children, dtype=int)
    if children.size == 0:
        raise EmptyChildSetError("the outcome has no direct children; the condition is vacuous")
    eps_stack = np.asarray(eps_cov, dtype=float)
    if eps_stack.shape != im.d_mats.shape:
        raise DimensionMismatchError(
            f"eps_cov shape {eps_stack.shape} != intervention moments shape {im.d_mats.shape}"
        )
    n_envs = im.n_envs
    step = 0.02 if n_envs <= 4 else 0.1

    best_margin, best_child, best_w = -np.inf, -np.inf, np.full(n_envs, 1.0 / n_envs)
    for w in _simplex_grid(n_envs, step):
        margin, child_min = _relaxed_score(w, im, children, eps_stack, tol)
        if margin > best_margin:
            best_margin, best_child, best_w = margin, child_min, w
    # Local refinement: shrinking coordinate perturbations around the best point.
    scale = step
    for _ in range(8):
        improved = False
        for e in range(n_envs):
            for sign in (1.0, -1.0):
                w = best_w.copy()
                w[e] += sign * scale
                w = project_simplex(w)
                margin, child_min = _relaxed_score(w, im, children, eps_stack, tol)
                if margin > best_margin:
                    best_margin, best_child, best_w = margin, child_min, w
                    improved = True
        if not improved:
            scale /= 2.0
    return IdCertificate(
        feasible=best_margin > 0.0, lambda_hat=best_child, w_hat=best_w, tol=tol
    )


@dataclass(frozen=True)
class SubsetProbe:
    """Population regression of the outcome on one covariate subset.

    ``coefs[e]`` embeds the per-environment least-squares fit into R^p;
    ``invariant`` flags subsets whose risks agree and whose coefficients
    coincide across environments.
    """

    subset: tuple
    coefs: np.ndarray
    risks: np.ndarray
    gap: float
    coef_spread: float
    invariant: bool


def invariance_probe(sem, iv_specs, tol=_INVARIANCE_TOL):
    """Exhaustive population check of risk invariance over covariate subsets.

    For each subset of covariates, fits the population least-squares model
    per environment from exact moments, and reports per-environment risks,
    the max-min risk gap, and the coefficient spread.  0.25-second work at
    p=10; guarded at p=20.
    """
    p = sem.p
    if p > _MAX_PROBE_DIM:
        raise DimensionTooLargeError(f"subset enumeration needs p <= {_MAX_PROBE_DIM}, got {p}")
    env_moments = [population_moments(sem, iv).to_env_moments() for iv in iv_specs]
    rows = []
    for r in range(p + 1):
        for subset in itertools.combinations(range(p), r):
            coefs = np.stack([ols_subset(m, subset) for m in env_moments])
            risks = np.array([risk(m, b) for m, b in zip(env_moments, coefs)])
            gap = float(risks.max() - risks.min())
            spread = float(np.abs(coefs - coefs[0]).max()) if len(env_moments) > 1 else 0.0
            rows.append(
                SubsetProbe(
                    subset=subset,
                    coefs=coefs,
                    risks=risks,
                    gap=gap,
                    coef_spread=spread,
                    invariant=gap <= tol and spread <= tol,
                )
            )
    return rows
