"""Finite-sample draws from a SEM scenario, with deterministic seeding.

Each environment gets its own generator derived from the scenario's master
seed through a splitmix64 mix, so environments are independent streams and
sampling order does not matter.  Determinism is promised within one build
(fixed numpy / BLAS versions), not across library versions.
"""

from dataclasses import dataclass

import numpy as np

from .errors import UnknownScenarioError
from .model import EnvironmentSpec, InterventionSpec, Scenario, SemModel, validate_acyclic

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _splitmix64(z):
    z = (z + _GOLDEN) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master, *indices):
    """Mix a master seed with any number of indices into a fresh 64-bit seed.

    Feeds each index through splitmix64 and folds it into the running state,
    so (master, 0, 1) and (master, 1, 0) land in unrelated streams.
    """
    state = int(master) & _MASK64
    for ix in indices:
        state = _splitmix64(state ^ _splitmix64(int(ix) & _MASK64))
    return state


@dataclass
class EnvironmentData:
    """Samples from a single environment: covariates ``x`` and outcomes ``y``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"inconsistent sample shapes x{self.x.shape}, y{self.y.shape}")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("samples contain non-finite values")

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.x.shape[1]


@dataclass
class MultiEnvData:
    """Per-environment samples, in scenario order."""

    envs: list

    def __post_init__(self):
        if len(self.envs) < 2:
            raise ValueError("multi-environment data needs at least two environments")

    @property
    def n_envs(self):
        return len(self.envs)

    @property
    def p(self):
        return self.envs[0].p

    def moments(self):
        from .risk import env_moments

        return [env_moments(e) for e in self.envs]


def _psd_factor(cov):
    """Factor L with L L^T = cov for possibly singular PSD covariances."""
    if not cov.any():
        return None
    vals, vecs = np.linalg.eigh(cov)
    vals = np.clip(vals, 0.0, None)
    return vecs * np.sqrt(vals)


def _draw_delta(iv, rng, n):
    """Draw n additive-intervention vectors for one environment."""
    p = iv.p
    delta = np.tile(iv.mean, (n, 1))
    factor = _psd_factor(iv.cov)
    if factor is not None:
        delta += rng.standard_normal((n, p)) @ factor.T
    active = np.flatnonzero(iv.half_widths)
    if active.size:
        hw = iv.half_widths[active]
        delta[:, active] += rng.uniform(-hw, hw, size=(n, active.size))
    return delta


def sample_environment(sem, spec, rng):
    """Draw ``spec.n`` i.i.d. samples of ``(Y, X)`` from one environment.

    Each sample solves the structural system for ``eps = eta + (0, delta)``
    with ``eta ~ N(0, eta_cov)`` and ``delta`` drawn from the environment's
    intervention, independently of ``eta``.
    """
    validate_acyclic(sem)
    p = sem.p
    n = spec.n
    eps = np.zeros((n, p + 1))
    eta_factor = _psd_factor(sem.eta_cov)
    if eta_factor is not None:
        eps += rng.standard_normal((n, p + 1)) @ eta_factor.T
    eps[:, 1:] += _draw_delta(spec.intervention, rng, n)
    a_inv = np.linalg.inv(np.eye(p + 1) - sem.b_matrix())
    joint = eps @ a_inv.T
    return EnvironmentData(x=joint[:, 1:], y=joint[:, 0])


def sample_scenario(scenario):
    """Sample every environment of a scenario with per-environment derived seeds."""
    envs = []
    for ix, spec in enumerate(scenario.environments):
        rng = np.random.default_rng(derive_seed(scenario.seed, ix))
        envs.append(sample_environment(scenario.sem, spec, rng))
    return MultiEnvData(envs=envs)


# ---------------------------------------------------------------------------
# Builtin scenarios
# ---------------------------------------------------------------------------

def _example1_sem(sigmas):
    # X1 -> Y -> X2 chain; per-environment covariate noise scale sigma_e is
    # split into a shared part at the minimum scale plus a Gaussian
    # intervention carrying the excess variance.
    sig = np.asarray(sigmas, dtype=float)
    if sig.ndim != 1 or sig.size < 2:
        raise ValueError("example1 needs at least two noise scales")
    base = float(np.min(sig) ** 2)
    eta_cov = np.diag([1.0, base, base])
    sem = SemModel(
        beta_star=np.array([1.0, 0.0]),
        b_yx=np.array([0.0, 1.0]),
        b_xx=np.zeros((2, 2)),
        eta_cov=eta_cov,
    )
    specs = []
    for s in sig:
        excess = float(s**2) - base
        if excess <= 0.0:
            specs.append(InterventionSpec.none(2))
        else:
            specs.append(InterventionSpec.gaussian(np.eye(2) * excess))
    return sem, specs


def _example2_sem():
    # X1 -> X2 -> Y -> X3, X1 -> X3, X4 isolated; the outcome's only direct
    # child is X3 (0-based index 2).
    b_xx = np.zeros((4, 4))
    b_xx[1, 0] = 1.0
    b_xx[2, 0] = 0.5
    return SemModel(
        beta_star=np.array([0.0, 2.0, 0.0, 0.0]),
        b_yx=np.array([0.0, 0.0, -1.0, 0.0]),
        b_xx=b_xx,
        eta_cov=np.eye(5),
    )


def _example2_specs(offchild_var):
    d_child = 2
    cov2 = np.zeros((4, 4))
    cov2[d_child, d_child] = 2.0
    for j in range(4):
        if j != d_child:
            cov2[j, j] = offchild_var
    spec1 = InterventionSpec.none(4)
    spec2 = InterventionSpec.gaussian(cov2)
    return [spec1, spec2]


def _section6_sem(p):
    if p < 5:
        raise ValueError("section6 scenarios need p >= 5")
    beta = np.zeros(p)
    beta[0] = 1.0
    beta[2] = 1.0
    b_yx = np.zeros(p)
    b_yx[3] = 1.0
    b_yx[4] = -1.0
    b_xx = np.zeros((p, p))
    b_xx[1, 0] = 1.0
    b_xx[2, 1] = 1.0
    return SemModel(beta_star=beta, b_yx=b_yx, b_xx=b_xx, eta_cov=np.eye(p + 1))


def _section6_specs(p, limited):
    specs = []
    for e in (1, 2, 3, 4):
        tail_var = 0.0 if limited else e**2 / 4.0
        cov = np.zeros((p, p))
        if p > 5 and tail_var > 0.0:
            cov[range(5, p), range(5, p)] = tail_var
        if e == 1:
            iv = InterventionSpec.none(p) if not cov.any() else InterventionSpec.gaussian(cov)
        elif e == 2:
            cov[range(5), range(5)] = 9.0
            iv = InterventionSpec.gaussian(cov)
        elif e == 3:
            shift = np.zeros(p)
            shift[:5] = (1.0, 1.5, 2.0, 2.5, 3.0)
            if cov.any():
                iv = InterventionSpec.mixed(p, mean=shift, cov=cov)
            else:
                iv = InterventionSpec.fixed(shift)
        else:
            hw = np.zeros(p)
            hw[:5] = 0.5
            if cov.any():
                iv = InterventionSpec.mixed(p, cov=cov, half_widths=hw)
            else:
                iv = InterventionSpec.uniform(hw)
        specs.append(iv)
    return specs


_SCENARIO_NAMES = (
    "example1",
    "example2_limited",
    "example2_weak",
    "example2_strong",
    "section6",
    "section6_limited",
)


def scenario_names():
    """Names accepted by :func:`make_scenario`."""
    return list(_SCENARIO_NAMES)


def make_scenario(name, n=10000, seed=0, **params):
    """Build a builtin scenario by name.

    Parameters
    ----------
    name : str
        One of ``example1``, ``example2_limited``, ``example2_weak``,
        ``example2_strong``, ``section6``, ``section6_limited``.
    n : int
        Sample size used for every environment.
    seed : int
        Master seed for :func:`sample_scenario`.
    params :
        ``sigmas`` for example1 (default ``(1.0, 2.0)``); ``p`` for the
        section6 family (default 5).
    """
    if name == "example1":
        sem, specs = _example1_sem(params.pop("sigmas", (1.0, 2.0)))
    elif name in ("example2_limited", "example2_weak", "example2_strong"):
        offchild = {"example2_limited": 0.0, "example2_weak": 0.01, "example2_strong": 0.25}[name]
        sem, specs = _example2_sem(), _example2_specs(offchild)
    elif name in ("section6", "section6_limited"):
        p = int(params.pop("p", 5))
        sem = _section6_sem(p)
        specs = _section6_specs(p, limited=name.endswith("limited"))
    else:
        raise UnknownScenarioError(
            f"unknown scenario {name!r}; available: {', '.join(_SCENARIO_NAMES)}"
        )
    if params:
        raise UnknownScenarioError(f"unused scenario parameters for {name!r}: {sorted(params)}")
    envs = [EnvironmentSpec(n=n, intervention=iv) for iv in specs]
    return Scenario(sem=sem, environments=envs, seed=seed)
