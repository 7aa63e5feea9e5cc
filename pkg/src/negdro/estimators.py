"""Scikit-learn estimators wrapping the multi-environment solvers.

All estimators share one fit signature: ``fit(X, y, envs=labels)`` where
``envs`` assigns each row to an environment.  They follow scikit-learn
conventions (constructor stores hyperparameters verbatim, fitted attributes
carry a trailing underscore, ``get_params``/``set_params`` inherited), so
they drop into pipelines, grid search and cross-validation.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import baselines
from .errors import NegdroError
from .risk import EnvMoments
from .solvers import SolverConfig, solve_penalized, solve_subgradient


def _split_environments(X, y, envs):
    """Group rows by environment label, preserving first-appearance order."""
    X, y = check_X_y(X, y, y_numeric=True)
    if envs is None:
        labels = np.zeros(X.shape[0], dtype=int)
    else:
        labels = np.asarray(envs)
        if labels.shape != (X.shape[0],):
            raise ValueError(f"envs must have shape ({X.shape[0]},), got {labels.shape}")
    order = []
    seen = set()
    for lab in labels:
        if lab not in seen:
            seen.add(lab)
            order.append(lab)
    moments = []
    for lab in order:
        mask = labels == lab
        xe, ye = X[mask], y[mask]
        n = xe.shape[0]
        moments.append(
            EnvMoments(gram=xe.T @ xe / n, cross=xe.T @ ye / n, ysq=float(ye @ ye / n), n=n)
        )
    return X, y, order, moments


class _MultiEnvRegressor(BaseEstimator, RegressorMixin):
    """Shared predict/fit plumbing; subclasses implement ``_solve``."""

    def fit(self, X, y, envs=None):
        X, y, labels, moments = _split_environments(X, y, envs)
        self.n_features_in_ = X.shape[1]
        self.environments_ = labels
        self.coef_ = self._solve(moments)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return X @ self.coef_


class NegDRORegressor(_MultiEnvRegressor):
    """Causal-effect estimator via negative-weight distributionally robust regression.

    Minimizes the worst weighted combination of per-environment squared
    risks, allowing weights as negative as ``-gamma``; large ``gamma``
    drives the fit toward risk parity across environments, which under
    sufficiently heterogeneous interventions singles out the causal
    coefficients.

    Parameters
    ----------
    gamma : float
        Invariance strength; 0 recovers plain group-DRO behaviour.
    algorithm : str
        ``"penalized"`` (gradient descent on the ridge-smoothed objective)
        or ``"subgradient"`` (nonsmooth descent with proximal selection).
    n_iter : int
        Iteration budget.
    mu : float or "auto"
        Ridge penalty on the inner weights; ``"auto"`` scales a small
        penalty to the outcome's second moment.
    step_size : float, "auto" or None
        ``"auto"`` uses ``1 / M`` with ``M`` the risk smoothness constant,
        which traverses the landscape in practical budgets; ``None`` selects
        the conservative worst-case rule of the underlying solver.
    c_step, upsilon, prox_inner_iters, prox_tol, init, tol :
        Forwarded to :class:`negdro.solvers.SolverConfig`.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Estimated coefficients.
    result_ : SolveResult
        Full solver trace for diagnostics.

    Examples
    --------
    >>> import numpy as np
    >>> from negdro import NegDRORegressor, make_scenario, sample_scenario
    >>> data = sample_scenario(make_scenario("example1", n=4000, seed=3))
    >>> X = np.vstack([d.x for d in data.envs])
    >>> y = np.concatenate([d.y for d in data.envs])
    >>> envs = np.repeat([0, 1], [d.n for d in data.envs])
    >>> est = NegDRORegressor(gamma=50.0, n_iter=4000).fit(X, y, envs=envs)
    >>> est.coef_.shape
    (2,)
    """

    def __init__(
        self,
        gamma=20.0,
        algorithm="penalized",
        n_iter=2000,
        mu="auto",
        step_size="auto",
        c_step=1.0,
        upsilon=None,
        prox_inner_iters=500,
        prox_tol=1e-8,
        init="erm",
        tol=None,
    ):
        self.gamma = gamma
        self.algorithm = algorithm
        self.n_iter = n_iter
        self.mu = mu
        self.step_size = step_size
        self.c_step = c_step
        self.upsilon = upsilon
        self.prox_inner_iters = prox_inner_iters
        self.prox_tol = prox_tol
        self.init = init
        self.tol = tol

    def _solve(self, moments):
        mu = self.mu
        if mu == "auto":
            mu = 1e-4 * float(np.mean([m.ysq for m in moments]))
        step = self.step_size
        if step == "auto":
            from .risk import smoothness_constant

            step = 1.0 / smoothness_constant(moments)
        config = SolverConfig(
            gamma=self.gamma,
            mu=mu,
            n_iter=self.n_iter,
            step_size=step,
            c_step=self.c_step,
            upsilon=self.upsilon,
            prox_inner_iters=self.prox_inner_iters,
            prox_tol=self.prox_tol,
            init=self.init,
            tol=self.tol,
        )
        if self.algorithm == "penalized":
            self.result_ = solve_penalized(moments, config)
        elif self.algorithm == "subgradient":
            self.result_ = solve_subgradient(moments, config)
        else:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        return self.result_.b_hat


class PooledRegressor(_MultiEnvRegressor):
    """Least squares on all environments pooled together (the non-causal baseline)."""

    def _solve(self, moments):
        res = baselines.erm(moments)
        if res.status != "ok":
            raise NegdroError(f"pooled regression failed: status={res.status}")
        self.result_ = res
        return res.b_hat


class CausalDantzigRegressor(_MultiEnvRegressor):
    """Moment-difference estimator; requires interventions on every covariate.

    Parameters
    ----------
    pairing : str or tuple
        ``"first_vs_rest"`` or an explicit environment index pair.
    """

    def __init__(self, pairing="first_vs_rest"):
        self.pairing = pairing

    def _solve(self, moments):
        res = baselines.causal_dantzig(moments, pairing=self.pairing)
        if res.status != "ok":
            raise NegdroError(
                "moment-difference system is singular; some covariate is never intervened"
            )
        self.result_ = res
        return res.b_hat


class DRIGRegressor(_MultiEnvRegressor):
    """Reference-environment robust regression.

    Parameters
    ----------
    gamma : float
        Extrapolation strength beyond the reference environment.
    ref_env : int
        Position of the reference environment among the fit's labels.
    weights : array or None
        Simplex weights over non-reference environments (uniform default).
    """

    def __init__(self, gamma=10.0, ref_env=0, weights=None):
        self.gamma = gamma
        self.ref_env = ref_env
        self.weights = weights

    def _solve(self, moments):
        res = baselines.drig(moments, gamma=self.gamma, ref_env=self.ref_env, weights=self.weights)
        if res.status != "ok":
            raise NegdroError(
                "robust objective lost positive definiteness; reference environment "
                "is not dominated at this gamma"
            )
        self.result_ = res
        return res.b_hat


class InvariantSubsetRegressor(_MultiEnvRegressor):
    """Exhaustive invariant-subset search (exponential in the covariate count).

    Parameters
    ----------
    threshold : float
        Maximum allowed per-environment risk spread for a subset to count
        as invariant.
    max_p : int
        Guard on the covariate count before enumeration is refused.

    Attributes
    ----------
    subset_ : tuple
        Selected covariate indices (0-based).
    """

    def __init__(self, threshold=0.05, max_p=20):
        self.threshold = threshold
        self.max_p = max_p

    def _solve(self, moments):
        res = baselines.exhaustive_invariance_search(
            moments, threshold=self.threshold, max_p=self.max_p
        )
        self.result_ = res
        self.subset_ = res.subset
        return res.b_hat
