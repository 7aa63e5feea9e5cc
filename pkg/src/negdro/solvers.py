"""Negative-weight DRO objective and its two first-order solvers.

Environment risks enter a minimax objective whose inner weights may go
negative down to ``-gamma``; after reparameterising the weights onto the
probability simplex, the objective for a coefficient vector ``b`` is

    phi(b)      = max_{w in simplex} sum_e (w_e - c) r_e(b),   c = gamma / (1 + gamma * E),
    phi_mu(b)   = max_{w in simplex} sum_e (w_e - c) r_e(b) - mu * ||w||^2,

where ``r_e`` is the squared-error risk of environment ``e`` and ``E`` the
number of environments.  ``phi_mu`` has a unique inner maximizer (strong
concavity in ``w``), making it differentiable with gradient
``sum_e (wbar_e - c) grad r_e(b)``.

Two solvers are provided: plain gradient descent on the smoothed objective
(selecting the iterate with the smallest gradient norm), and subgradient
descent on the nonsmooth objective (selecting the iterate with the smallest
proximal displacement).  Both are deterministic given their configuration.
"""

from dataclasses import dataclass, field

import numpy as np

from . import risk as riskmod
from .errors import NonFiniteError, UpsilonTooLargeError

_DIVERGENCE_NORM = 1e8


def project_simplex(values):
    """Euclidean projection onto the probability simplex.

    Sort-and-threshold scheme: find the largest ``k`` with
    ``u_k + (1 - sum_{i<=k} u_i) / k > 0`` for the descending sort ``u`` and
    clip at that threshold.  Exact up to floating point.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("projection expects a non-empty vector")
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("cannot project non-finite values")
    if values.size == 1:
        return np.ones(1)
    if values.size <= 32:
        # plain-Python threshold search; much faster than numpy at this size
        u = sorted(values.tolist(), reverse=True)
        css = 0.0
        tau = u[0] - 1.0
        for j, uj in enumerate(u, start=1):
            css += uj
            t = (css - 1.0) / j
            if uj - t > 0.0 or j == 1:  # j=1 always qualifies exactly
                tau = t
            else:
                break
        return np.maximum(values - tau, 0.0)
    u = np.sort(values)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, u.size + 1)
    cond = u - (css - 1.0) / ks > 0.0
    cond[0] = True  # always holds exactly; guards float cancellation at huge inputs
    k = int(np.max(np.flatnonzero(cond))) + 1
    tau = (css[k - 1] - 1.0) / k
    return np.maximum(values - tau, 0.0)


def _as_moments(data):
    """Accept MultiEnvData, EnvMoments sequences, or joint-moment sequences."""
    if hasattr(data, "moments"):
        return data.moments()
    out = []
    for item in data:
        out.append(item.to_env_moments() if hasattr(item, "to_env_moments") else item)
    if not out:
        raise ValueError("no environments provided")
    return out


class _MomentStack:
    """Stacked per-environment statistics for fast risk/gradient evaluation."""

    def __init__(self, moments):
        self.grams = np.stack([m.gram for m in moments])
        self.crosses = np.stack([m.cross for m in moments])
        self.ysqs = np.array([m.ysq for m in moments])

    @property
    def n_envs(self):
        return self.grams.shape[0]

    @property
    def p(self):
        return self.grams.shape[1]

    def risks(self, b):
        gb = self.grams @ b
        return self.ysqs - 2.0 * (self.crosses @ b) + gb @ b

    def risks_and_gradients(self, b):
        gb = self.grams @ b
        risks = self.ysqs - 2.0 * (self.crosses @ b) + gb @ b
        grads = 2.0 * (gb - self.crosses)
        return risks, grads

    def pooled_ols(self):
        gram = self.grams.mean(axis=0)
        cross = self.crosses.mean(axis=0)
        return np.linalg.solve(gram, cross)


def _coupling(gamma, n_envs):
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return gamma / (1.0 + gamma * n_envs)


def inner_max(risks, gamma):
    """Exact inner maximum of the nonsmooth objective at fixed risks.

    Returns ``(vertex_weight, value, argmax_indices)``: the maximizing
    simplex vertex (lowest index on ties), the objective value
    ``max_e r_e - c * sum_e r_e`` and every index attaining the maximum
    (the active set spanning the subdifferential).
    """
    risks = np.asarray(risks, dtype=float)
    c = _coupling(gamma, risks.size)
    top = float(np.max(risks))
    argmax = np.flatnonzero(risks >= top - 1e-12 * max(1.0, abs(top)))
    w = np.zeros(risks.size)
    w[argmax[0]] = 1.0
    value = top - c * float(risks.sum())
    return w, value, argmax


def inner_max_penalized(risks, gamma, mu):
    """Unique inner maximizer and value of the ridge-smoothed objective.

    Strong concavity in the weights makes the maximizer the Euclidean
    projection of ``r / (2 mu)`` onto the simplex.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    risks = np.asarray(risks, dtype=float)
    c = _coupling(gamma, risks.size)
    w = project_simplex(risks / (2.0 * mu))
    value = float(w @ risks - mu * (w @ w) - c * risks.sum())
    return w, value


def phi_value(moments, b, gamma):
    """Nonsmooth objective value at ``b``."""
    stack = moments if isinstance(moments, _MomentStack) else _MomentStack(_as_moments(moments))
    _, value, _ = inner_max(stack.risks(np.asarray(b, dtype=float)), gamma)
    return value


def phi_mu_value(moments, b, gamma, mu):
    """Ridge-smoothed objective value at ``b``."""
    stack = moments if isinstance(moments, _MomentStack) else _MomentStack(_as_moments(moments))
    _, value = inner_max_penalized(stack.risks(np.asarray(b, dtype=float)), gamma, mu)
    return value


def phi_mu_gradient(moments, b, gamma, mu):
    """Gradient of the smoothed objective via the envelope theorem.

    With the unique maximizing weight ``wbar`` the gradient is
    ``sum_e (wbar_e - c) grad r_e(b)``.
    """
    stack = moments if isinstance(moments, _MomentStack) else _MomentStack(_as_moments(moments))
    b = np.asarray(b, dtype=float)
    risks, grads = stack.risks_and_gradients(b)
    w, _ = inner_max_penalized(risks, gamma, mu)
    c = _coupling(gamma, stack.n_envs)
    return (w - c) @ grads


def objective_forms_agree(moments, b, gamma):
    """Evaluate the two equivalent displays of the unscaled minimax objective.

    Returns ``(vertex_form, spread_form)`` where the first assigns weight
    ``1 + gamma*(E-1)`` to the largest risk and ``-gamma`` to the rest, and
    the second is ``max_e r_e + gamma*E*(max_e r_e - mean_e r_e)``.  The two
    must coincide; tests assert it.
    """
    stack = moments if isinstance(moments, _MomentStack) else _MomentStack(_as_moments(moments))
    risks = stack.risks(np.asarray(b, dtype=float))
    n_envs = risks.size
    top = float(np.max(risks))
    weights = np.full(n_envs, -gamma)
    weights[int(np.argmax(risks))] = 1.0 + gamma * (n_envs - 1)
    vertex_form = float(weights @ risks)
    spread_form = top + gamma * n_envs * (top - float(risks.mean()))
    return vertex_form, spread_form


def weak_convexity_bound(moments, gamma):
    """Upper bound on the weak-convexity modulus of the nonsmooth objective.

    The concave part ``-c * sum_e r_e`` has curvature bounded by
    ``2 c lambda_max(sum_e gram_e)``; the max term is convex.
    """
    moments = _as_moments(moments)
    c = _coupling(gamma, len(moments))
    total = sum(m.gram for m in moments)
    return 2.0 * c * float(np.linalg.eigvalsh(total)[-1])


def default_upsilon(moments, gamma):
    """Largest provably safe proximal parameter, half the stability limit.

    Returns ``1 / (2 rho)`` for weak-convexity bound ``rho``; for a convex
    objective (``gamma = 0``) the limit is infinite and 1.0 is used.
    """
    rho = weak_convexity_bound(moments, gamma)
    return 1.0 / (2.0 * rho) if rho > 1e-12 else 1.0


@dataclass
class SolverConfig:
    """Knobs for both solvers; fields not used by an algorithm are ignored.

    ``mu=None`` selects ``M / sqrt(n_iter)`` with ``M`` the smoothness
    constant of the environment risks; ``step_size=None`` selects the
    algorithm's own rule (``1 / (2M + 2M^2/mu)`` for the smoothed solver,
    ``c_step / sqrt(n_iter + 1)`` for the subgradient solver);
    ``upsilon=None`` selects :func:`default_upsilon`.  ``init`` is
    ``"erm"`` (least squares on equally pooled environments, the default
    warm start), ``"zero"``,
    or an explicit vector.  ``tol`` optionally stops the smoothed solver
    once the gradient norm drops below it.
    """

    gamma: float = 0.0
    mu: float | None = None
    n_iter: int = 2000
    step_size: float | None = None
    c_step: float = 1.0
    upsilon: float | None = None
    prox_inner_iters: int = 500
    prox_tol: float = 1e-8
    init: object = "erm"
    tol: float | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.mu is not None and self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.n_iter < 1:
            raise ValueError("n_iter must be >= 1")
        for name in ("step_size", "upsilon"):
            val = getattr(self, name)
            if val is not None and val <= 0:
                raise ValueError(f"{name} must be positive")
        if self.c_step <= 0 or self.prox_inner_iters < 1 or self.prox_tol <= 0:
            raise ValueError("c_step, prox_inner_iters and prox_tol must be positive")


@dataclass
class SolveResult:
    """Solver output: chosen iterate plus the per-iteration trace.

    ``criterion_trace[t]`` is the gradient norm (smoothed solver) or the
    proximal displacement (subgradient solver) at iterate ``t``;
    ``selected_iter`` minimizes it over t = 1..n_iter.  ``status`` is
    ``"converged"`` when an explicit tolerance stopped the run early and
    ``"max_iters"`` when the full budget ran.
    """

    b_hat: np.ndarray
    selected_iter: int
    status: str
    objective_trace: np.ndarray
    criterion_trace: np.ndarray
    weight_trace: np.ndarray
    info: dict = field(default_factory=dict)


def _initial_point(config, stack):
    if isinstance(config.init, str):
        if config.init == "erm":
            return stack.pooled_ols()
        if config.init == "zero":
            return np.zeros(stack.p)
        raise ValueError(f"unknown init {config.init!r}")
    b0 = np.asarray(config.init, dtype=float)
    if b0.shape != (stack.p,):
        raise ValueError(f"init vector must have shape ({stack.p},)")
    return b0.copy()


def _guard_finite(b, t):
    if not np.all(np.isfinite(b)) or np.linalg.norm(b) > _DIVERGENCE_NORM:
        raise NonFiniteError(f"iterates diverged at iteration {t}; reduce the step size")


def solve_penalized(data, config):
    """Gradient descent on the ridge-smoothed objective.

    Runs ``n_iter`` fixed-step updates ``b <- b - alpha * grad phi_mu(b)``
    and returns the visited iterate (from iteration 1 on) with the smallest
    gradient norm.  With the default step the trajectory descends
    monotonically and the best gradient norm decays like
    ``sqrt(phi_mu(b0) / n_iter)``.
    """
    stack = _MomentStack(_as_moments(data))
    n_envs, n_iter = stack.n_envs, config.n_iter
    m_const = riskmod.smoothness_constant(_as_moments(data))
    mu = config.mu if config.mu is not None else m_const / np.sqrt(n_iter)
    alpha = config.step_size
    if alpha is None:
        alpha = 1.0 / (2.0 * m_const + 2.0 * m_const**2 / mu)
    c = _coupling(config.gamma, n_envs)
    b = _initial_point(config, stack)

    objective = np.full(n_iter + 1, np.nan)
    grad_norm = np.full(n_iter + 1, np.nan)
    weights = np.full((n_iter + 1, n_envs), np.nan)
    best_norm, best_iter, best_b = np.inf, -1, None
    status = "max_iters"
    last = n_iter

    for t in range(n_iter + 1):
        _guard_finite(b, t)
        risks, grads = stack.risks_and_gradients(b)
        w, value = inner_max_penalized(risks, config.gamma, mu)
        g = (w - c) @ grads
        gn = float(np.linalg.norm(g))
        objective[t], grad_norm[t], weights[t] = value, gn, w
        if t >= 1 and gn < best_norm:
            best_norm, best_iter, best_b = gn, t, b.copy()
        if t >= 1 and config.tol is not None and gn <= config.tol:
            status, last = "converged", t
            break
        if t < n_iter:
            b = b - alpha * g

    return SolveResult(
        b_hat=best_b,
        selected_iter=best_iter,
        status=status,
        objective_trace=objective[: last + 1],
        criterion_trace=grad_norm[: last + 1],
        weight_trace=weights[: last + 1],
        info={"mu": mu, "step_size": alpha, "smoothness": m_const, "gamma": config.gamma},
    )


@dataclass
class ProxResult:
    """Proximal point, whether the inner loop met its tolerance, and its cost."""

    zeta: np.ndarray
    converged: bool
    iterations: int
    objective: float


def prox(b, upsilon, moments, gamma, inner_iters=500, tol=1e-8):
    """Proximal mapping of the nonsmooth objective at ``b``.

    Minimizes ``phi(z) + ||z - b||^2 / (2 upsilon)``, which is strongly
    convex whenever ``upsilon`` stays below the reciprocal weak-convexity
    bound (checked; violation raises :class:`UpsilonTooLargeError`).  The
    inner loop is subgradient descent with the strongly-convex Polyak
    schedule ``2 / (sigma (k+2))``, capped at the smooth-piece safe step
    ``1 / (2 M_max + 1/upsilon)`` to avoid early overshoot, with
    best-iterate tracking; it stops once the best objective improves by
    less than ``tol`` over ten iterations or the budget runs out (the
    flagged result is still usable).
    """
    stack = moments if isinstance(moments, _MomentStack) else _MomentStack(_as_moments(moments))
    b = np.asarray(b, dtype=float)
    c = _coupling(gamma, stack.n_envs)
    eig_top = max(float(np.linalg.eigvalsh(g)[-1]) for g in stack.grams)
    rho = 2.0 * c * float(np.linalg.eigvalsh(stack.grams.sum(axis=0))[-1])
    if rho > 0 and upsilon >= 1.0 / rho:
        raise UpsilonTooLargeError(
            f"upsilon={upsilon!r} breaks strong convexity; need upsilon < {1.0 / rho!r}"
        )
    sigma = 1.0 / upsilon - rho
    step_cap = 1.0 / (2.0 * eig_top * (1.0 + c * stack.n_envs) + 1.0 / upsilon)

    z = b.copy()
    best_z, best_obj = z.copy(), np.inf
    reference, patience = np.inf, 0
    iterations = inner_iters
    converged = False
    for k in range(inner_iters):
        risks, grads = stack.risks_and_gradients(z)
        e_star = int(np.argmax(risks))
        diff = z - b
        obj = float(np.max(risks) - c * risks.sum() + diff @ diff / (2.0 * upsilon))
        if obj < best_obj:
            best_obj, best_z = obj, z.copy()
        if k >= 20 and reference - best_obj < tol:
            patience += 1
            if patience >= 10:
                converged, iterations = True, k + 1
                break
        else:
            reference, patience = best_obj, 0
        g = grads[e_star] - c * grads.sum(axis=0) + diff / upsilon
        z = z - min(2.0 / (sigma * (k + 2)), step_cap) * g
        _guard_finite(z, k)
    return ProxResult(zeta=best_z, converged=converged, iterations=iterations, objective=best_obj)


def solve_subgradient(data, config):
    """Subgradient descent on the nonsmooth objective with proximal selection.

    Each iteration steps along the subgradient built from the maximizing
    vertex weight (lowest index on ties) with step
    ``c_step / sqrt(n_iter + 1)``, then evaluates the proximal mapping at
    the new iterate; the output is the iterate with the smallest proximal
    displacement, the nonsmooth stand-in for a small gradient norm.
    """
    stack = _MomentStack(_as_moments(data))
    n_envs, n_iter = stack.n_envs, config.n_iter
    c = _coupling(config.gamma, n_envs)
    upsilon = config.upsilon
    if upsilon is None:
        rho = 2.0 * c * float(np.linalg.eigvalsh(stack.grams.sum(axis=0))[-1])
        upsilon = 1.0 / (2.0 * rho) if rho > 1e-12 else 1.0
    alpha = config.step_size
    if alpha is None:
        alpha = config.c_step / np.sqrt(n_iter + 1.0)
    b = _initial_point(config, stack)

    objective = np.full(n_iter + 1, np.nan)
    displacement = np.full(n_iter + 1, np.nan)
    weights = np.full((n_iter + 1, n_envs), np.nan)
    best_disp, best_iter, best_b = np.inf, -1, None
    prox_failures = 0

    risks, grads = stack.risks_and_gradients(b)
    w, value, _ = inner_max(risks, config.gamma)
    objective[0], weights[0] = value, w
    for t in range(n_iter):
        g = grads[int(np.argmax(w))] - c * grads.sum(axis=0)
        b = b - alpha * g
        _guard_finite(b, t + 1)
        risks, grads = stack.risks_and_gradients(b)
        w, value, _ = inner_max(risks, config.gamma)
        prox_res = prox(
            b, upsilon, stack, config.gamma,
            inner_iters=config.prox_inner_iters, tol=config.prox_tol,
        )
        if not prox_res.converged:
            prox_failures += 1
        d = float(np.linalg.norm(prox_res.zeta - b))
        objective[t + 1], displacement[t + 1], weights[t + 1] = value, d, w
        if d < best_disp:
            best_disp, best_iter, best_b = d, t + 1, b.copy()

    return SolveResult(
        b_hat=best_b,
        selected_iter=best_iter,
        status="max_iters",
        objective_trace=objective,
        criterion_trace=displacement,
        weight_trace=weights,
        info={
            "step_size": alpha,
            "upsilon": upsilon,
            "gamma": config.gamma,
            "prox_failures": prox_failures,
        },
    )
