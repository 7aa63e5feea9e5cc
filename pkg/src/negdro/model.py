"""Linear SEM ground truth for multi-environment data with additive interventions.

The joint vector ``(Y, X)`` solves ``(Y, X) = B (Y, X) + eps`` where the
structural matrix ``B`` stacks the causal effect on the outcome, the reverse
effect of the outcome on covariates, and the covariate interrelations::

    B = [[0,    beta_star^T],
         [b_yx, b_xx       ]]

The noise decomposes as ``eps = eta + (0, delta)`` with ``eta`` shared across
environments and ``delta`` the environment-specific additive intervention on
the covariates; the outcome coordinate is never intervened.  Index 0 of every
``(p+1)``-sized object is the outcome; covariates occupy 1..p.  Covariate
index sets elsewhere in the package (children, subsets) are 0-based.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _validation as v
from .errors import CyclicGraphError, DimensionMismatchError, NearSingularError

_INVERTIBILITY_TOL = 1e-10

VALID_KINDS = ("none", "fixed", "gaussian", "uniform", "mixed")


@dataclass(frozen=True)
class InterventionSpec:
    """Distribution of the additive covariate perturbation in one environment.

    Parameters
    ----------
    kind : str
        One of ``none``, ``fixed``, ``gaussian``, ``uniform`` or ``mixed``.
        ``mixed`` allows a Gaussian component and per-coordinate uniform
        components at the same time (used by scenarios that perturb
        different covariate blocks in different ways).
    mean : array of shape (p,)
        Deterministic shift; the whole perturbation for ``kind="fixed"``.
    cov : array of shape (p, p)
        Covariance of the Gaussian component.
    half_widths : array of shape (p,)
        Per-coordinate half-widths ``a`` of centred uniform components,
        each contributing variance ``a**2 / 3``.
    """

    kind: str
    mean: np.ndarray
    cov: np.ndarray
    half_widths: np.ndarray

    def __post_init__(self):
        if self.kind not in VALID_KINDS:
            raise ValueError(f"unknown intervention kind {self.kind!r}")
        mean = v.as_vector(self.mean, name="mean")
        p = mean.shape[0]
        cov = v.check_psd(v.as_matrix(self.cov, shape=(p, p), name="cov"), name="cov")
        hw = v.as_vector(self.half_widths, p=p, name="half_widths")
        if np.any(hw < 0):
            raise ValueError("half_widths must be non-negative")
        if self.kind == "none" and (mean.any() or cov.any() or hw.any()):
            raise ValueError("kind='none' requires zero mean, cov and half_widths")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "half_widths", hw)

    @property
    def p(self):
        return self.mean.shape[0]

    @classmethod
    def none(cls, p):
        z = np.zeros(p)
        return cls("none", z, np.zeros((p, p)), z)

    @classmethod
    def fixed(cls, shift):
        shift = v.as_vector(shift, name="shift")
        p = shift.shape[0]
        return cls("fixed", shift, np.zeros((p, p)), np.zeros(p))

    @classmethod
    def gaussian(cls, cov, mean=None):
        cov = v.as_matrix(cov, name="cov")
        p = cov.shape[0]
        mean = np.zeros(p) if mean is None else v.as_vector(mean, p=p, name="mean")
        return cls("gaussian", mean, cov, np.zeros(p))

    @classmethod
    def uniform(cls, half_widths):
        hw = v.as_vector(half_widths, name="half_widths")
        p = hw.shape[0]
        return cls("uniform", np.zeros(p), np.zeros((p, p)), hw)

    @classmethod
    def mixed(cls, p, mean=None, cov=None, half_widths=None):
        mean = np.zeros(p) if mean is None else v.as_vector(mean, p=p, name="mean")
        cov = np.zeros((p, p)) if cov is None else v.as_matrix(cov, shape=(p, p), name="cov")
        hw = np.zeros(p) if half_widths is None else v.as_vector(half_widths, p=p, name="half_widths")
        return cls("mixed", mean, cov, hw)

    def second_moment(self):
        """E[delta delta^T]: covariance of all components plus the mean term."""
        return self.cov + np.diag(self.half_widths**2 / 3.0) + np.outer(self.mean, self.mean)


@dataclass(frozen=True)
class SemModel:
    """Ground-truth linear SEM shared by all environments.

    Parameters
    ----------
    beta_star : array of shape (p,)
        Causal effect of the covariates on the outcome.
    b_yx : array of shape (p,)
        Effect of the outcome on each covariate (nonzeros mark the
        outcome's direct children).
    b_xx : array of shape (p, p)
        Covariate interrelations; ``b_xx[i, j] != 0`` iff covariate ``j``
        is a direct cause of covariate ``i``.
    eta_cov : array of shape (p+1, p+1)
        Second moment of the shared noise ``eta``, outcome coordinate first.
    """

    beta_star: np.ndarray
    b_yx: np.ndarray
    b_xx: np.ndarray
    eta_cov: np.ndarray

    def __post_init__(self):
        beta = v.as_vector(self.beta_star, name="beta_star")
        p = beta.shape[0]
        b_yx = v.as_vector(self.b_yx, p=p, name="b_yx")
        b_xx = v.as_matrix(self.b_xx, shape=(p, p), name="b_xx")
        eta_cov = v.check_psd(
            v.as_matrix(self.eta_cov, shape=(p + 1, p + 1), name="eta_cov"), name="eta_cov"
        )
        object.__setattr__(self, "beta_star", beta)
        object.__setattr__(self, "b_yx", b_yx)
        object.__setattr__(self, "b_xx", b_xx)
        object.__setattr__(self, "eta_cov", eta_cov)

    @property
    def p(self):
        return self.beta_star.shape[0]

    @property
    def sigma_y_sq(self):
        """Variance of the outcome noise, invariant across environments."""
        return float(self.eta_cov[0, 0])

    def b_matrix(self):
        """Assemble the full (p+1) x (p+1) structural matrix."""
        p = self.p
        b = np.zeros((p + 1, p + 1))
        b[0, 1:] = self.beta_star
        b[1:, 0] = self.b_yx
        b[1:, 1:] = self.b_xx
        return b


@dataclass(frozen=True)
class EnvironmentSpec:
    """Sample size and intervention for one environment."""

    n: int
    intervention: InterventionSpec

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError("environment sample size must be >= 1")
        object.__setattr__(self, "n", int(self.n))


@dataclass(frozen=True)
class Scenario:
    """A SEM together with at least two environments and a master seed."""

    sem: SemModel
    environments: list = field(default_factory=list)
    seed: int = 0

    def __post_init__(self):
        if len(self.environments) < 2:
            raise ValueError("a scenario needs at least two environments")
        for i, env in enumerate(self.environments):
            if env.intervention.p != self.sem.p:
                raise DimensionMismatchError(
                    f"environment {i} intervention dimension {env.intervention.p} != p={self.sem.p}"
                )
        object.__setattr__(self, "seed", int(self.seed) & (2**64 - 1))

    @property
    def n_envs(self):
        return len(self.environments)


def validate_acyclic(sem):
    """Check that the nonzero pattern of B is acyclic and I - B is invertible.

    The graph is defined by exact-zero structure: ``B[i, j] != 0`` means
    variable ``j`` directly causes variable ``i``.  Acyclicity is tested on
    that pattern (Kahn peeling), then the smallest singular value of
    ``I - B`` must exceed 1e-10.

    Raises
    ------
    CyclicGraphError
        If the pattern admits no topological order.
    NearSingularError
        If ``I - B`` is numerically singular despite an acyclic pattern.
    """
    b = sem.b_matrix()
    pattern = b != 0.0
    # Kahn's algorithm: repeatedly peel nodes with no remaining parents.
    remaining = np.ones(pattern.shape[0], dtype=bool)
    for _ in range(pattern.shape[0]):
        active = pattern[np.ix_(remaining, remaining)]
        sources = ~active.any(axis=1)
        if not sources.any():
            raise CyclicGraphError("structural matrix contains a directed cycle")
        idx = np.flatnonzero(remaining)
        remaining[idx[sources]] = False
        if not remaining.any():
            break
    i_minus_b = np.eye(b.shape[0]) - b
    smallest_sv = np.linalg.svd(i_minus_b, compute_uv=False)[-1]
    if smallest_sv <= _INVERTIBILITY_TOL:
        raise NearSingularError(
            f"I - B is numerically singular (smallest singular value {smallest_sv:.3e})"
        )


class JointSecondMoment:
    """Population second moment of ``(Y, X)`` in one environment.

    Wraps the ``(p+1) x (p+1)`` matrix with named views used by the risk
    machinery: ``gram`` (covariates), ``cross`` (covariates vs outcome) and
    ``ysq`` (outcome).
    """

    def __init__(self, matrix):
        self.matrix = v.check_symmetric(matrix, name="joint second moment")

    @property
    def p(self):
        return self.matrix.shape[0] - 1

    @property
    def gram(self):
        return self.matrix[1:, 1:]

    @property
    def cross(self):
        return self.matrix[1:, 0]

    @property
    def ysq(self):
        return float(self.matrix[0, 0])

    def to_env_moments(self):
        from .risk import EnvMoments

        return EnvMoments(gram=self.gram, cross=self.cross, ysq=self.ysq, n=None)


def population_moments(sem, intervention):
    """Exact second moment of ``(Y, X)`` under one intervention.

    Solves the structural system: with ``M = eta_cov + blockdiag(0, E[dd^T])``
    (the intervention is uncorrelated with the shared noise), the joint
    second moment is ``(I-B)^{-1} M (I-B)^{-T}``.
    """
    validate_acyclic(sem)
    if intervention.p != sem.p:
        raise DimensionMismatchError(
            f"intervention dimension {intervention.p} != model dimension {sem.p}"
        )
    p = sem.p
    m_eps = sem.eta_cov.copy()
    m_eps[1:, 1:] += intervention.second_moment()
    a_inv = np.linalg.inv(np.eye(p + 1) - sem.b_matrix())
    joint = a_inv @ m_eps @ a_inv.T
    return JointSecondMoment((joint + joint.T) / 2.0)


def children_of_outcome(sem):
    """0-based indices of covariates directly caused by the outcome."""
    return np.flatnonzero(sem.b_yx)
