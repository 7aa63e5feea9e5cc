"""Model-layer tests: structural validation and exact population moments.

Core claims:
    - acyclicity detection on the sparsity pattern (cycles, self-loops, chains)
    - population second moments match brute-force Monte-Carlo on the chain SEM
    - closed-form regression values on the two-covariate chain match hand algebra
    - the causal coefficients always achieve the invariant residual risk
"""

import numpy as np
import pytest

from negdro import (
    CyclicGraphError,
    InterventionSpec,
    NearSingularError,
    SemModel,
    children_of_outcome,
    make_scenario,
    population_moments,
    validate_acyclic,
)
from negdro.errors import DimensionMismatchError


def chain_sem(sigma=1.0):
    """X1 -> Y -> X2 with unit outcome noise and covariate noise scale sigma."""
    return SemModel(
        beta_star=np.array([1.0, 0.0]),
        b_yx=np.array([0.0, 1.0]),
        b_xx=np.zeros((2, 2)),
        eta_cov=np.diag([1.0, sigma**2, sigma**2]),
    )


class TestValidateAcyclic:
    def test_chain_is_acyclic(self):
        validate_acyclic(chain_sem())

    def test_empty_graph_is_acyclic(self):
        sem = SemModel(
            beta_star=np.zeros(3),
            b_yx=np.zeros(3),
            b_xx=np.zeros((3, 3)),
            eta_cov=np.eye(4),
        )
        validate_acyclic(sem)

    def test_two_cycle_through_outcome(self):
        sem = SemModel(
            beta_star=np.array([1.0]),
            b_yx=np.array([1.0]),
            b_xx=np.zeros((1, 1)),
            eta_cov=np.eye(2),
        )
        with pytest.raises(CyclicGraphError):
            validate_acyclic(sem)

    def test_covariate_cycle(self):
        b_xx = np.array([[0.0, 1.0], [1.0, 0.0]])
        sem = SemModel(
            beta_star=np.zeros(2), b_yx=np.zeros(2), b_xx=b_xx, eta_cov=np.eye(3)
        )
        with pytest.raises(CyclicGraphError):
            validate_acyclic(sem)

    def test_near_singular_flagged(self):
        # A cascade of huge coefficients keeps the pattern acyclic while the
        # smallest singular value of I - B underflows the tolerance.
        scale = 1e4
        b_xx = np.zeros((3, 3))
        b_xx[1, 0] = scale
        b_xx[2, 1] = scale
        sem = SemModel(
            beta_star=np.zeros(3),
            b_yx=np.array([scale, 0.0, 0.0]),
            b_xx=b_xx,
            eta_cov=np.eye(4),
        )
        with pytest.raises(NearSingularError):
            validate_acyclic(sem)


class TestInterventionSpec:
    def test_none_second_moment_is_zero(self):
        assert not InterventionSpec.none(3).second_moment().any()

    def test_fixed_second_moment_is_outer_product(self):
        shift = np.array([1.0, -2.0])
        np.testing.assert_allclose(
            InterventionSpec.fixed(shift).second_moment(), np.outer(shift, shift)
        )

    def test_uniform_variance_is_third_of_squared_half_width(self):
        iv = InterventionSpec.uniform([0.5, 0.0])
        np.testing.assert_allclose(iv.second_moment(), np.diag([0.25 / 3.0, 0.0]))

    def test_none_kind_rejects_nonzero_mean(self):
        with pytest.raises(ValueError):
            InterventionSpec("none", np.ones(2), np.zeros((2, 2)), np.zeros(2))

    def test_second_moment_psd_random(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            p = rng.integers(1, 5)
            a = rng.standard_normal((p, p))
            iv = InterventionSpec.mixed(
                p, mean=rng.standard_normal(p), cov=a @ a.T, half_widths=rng.uniform(0, 1, p)
            )
            assert np.linalg.eigvalsh(iv.second_moment())[0] >= -1e-10


class TestPopulationMoments:
    def test_matches_monte_carlo_chain(self):
        # Oracle: 1e6 direct samples of the structural equations.
        sigma = 1.0
        rng = np.random.default_rng(7)
        n = 1_000_000
        e1 = rng.normal(0.0, sigma, n)
        ey = rng.normal(0.0, 1.0, n)
        e2 = rng.normal(0.0, sigma, n)
        x1 = e1
        y = x1 + ey
        x2 = y + e2
        sim = np.stack([y, x1, x2], axis=1)
        mc = sim.T @ sim / n

        jm = population_moments(chain_sem(sigma), InterventionSpec.none(2))
        np.testing.assert_allclose(jm.matrix, mc, atol=6e-3)

    def test_closed_form_chain_entries(self):
        sigma = 2.0
        jm = population_moments(chain_sem(sigma), InterventionSpec.none(2))
        s2 = sigma**2
        np.testing.assert_allclose(jm.ysq, s2 + 1.0)
        np.testing.assert_allclose(jm.gram[0, 0], s2)
        np.testing.assert_allclose(jm.gram[1, 1], 2.0 * s2 + 1.0)
        np.testing.assert_allclose(jm.cross, [s2, s2 + 1.0])

    def test_regression_on_effect_covariate(self):
        # Regressing the outcome on its child at sigma=1 gives slope 2/3.
        jm = population_moments(chain_sem(1.0), InterventionSpec.none(2))
        slope = jm.cross[1] / jm.gram[1, 1]
        np.testing.assert_allclose(slope, 2.0 / 3.0, rtol=1e-12)

    def test_identity_noise_no_intervention(self):
        sem = SemModel(
            beta_star=np.array([0.5, 0.0]),
            b_yx=np.array([0.0, -1.0]),
            b_xx=np.zeros((2, 2)),
            eta_cov=np.eye(3),
        )
        jm = population_moments(sem, InterventionSpec.none(2))
        a_inv = np.linalg.inv(np.eye(3) - sem.b_matrix())
        np.testing.assert_allclose(jm.matrix, a_inv @ a_inv.T, atol=1e-12)

    def test_moment_matrix_is_psd(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = int(rng.integers(1, 6))
            sem = SemModel(
                beta_star=rng.standard_normal(p) * (rng.random(p) < 0.5),
                b_yx=np.zeros(p),
                b_xx=np.tril(rng.standard_normal((p, p)), k=-1),
                eta_cov=np.eye(p + 1),
            )
            a = rng.standard_normal((p, p))
            iv = InterventionSpec.gaussian(a @ a.T, mean=rng.standard_normal(p))
            jm = population_moments(sem, iv)
            assert np.linalg.eigvalsh(jm.matrix)[0] >= -1e-8

    def test_causal_risk_invariant_across_interventions(self):
        # The risk at the true coefficients equals the outcome noise variance
        # whatever the intervention is.
        rng = np.random.default_rng(5)
        sc = make_scenario("section6", p=6)
        sem = sc.sem
        for _ in range(10):
            a = rng.standard_normal((6, 6))
            iv = InterventionSpec.gaussian(a @ a.T, mean=rng.standard_normal(6))
            jm = population_moments(sem, iv)
            b = sem.beta_star
            value = jm.ysq - 2.0 * b @ jm.cross + b @ jm.gram @ b
            np.testing.assert_allclose(value, sem.sigma_y_sq, rtol=1e-8)

    def test_adding_psd_intervention_grows_diagonal(self):
        sem = make_scenario("section6", p=5).sem
        base = population_moments(sem, InterventionSpec.none(5))
        rng = np.random.default_rng(11)
        for _ in range(10):
            a = rng.standard_normal((5, 5))
            jm = population_moments(sem, InterventionSpec.gaussian(a @ a.T))
            assert np.all(np.diag(jm.gram) >= np.diag(base.gram) - 1e-12)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(DimensionMismatchError):
            population_moments(chain_sem(), InterventionSpec.none(3))


class TestChildrenOfOutcome:
    def test_example_chain(self):
        assert children_of_outcome(chain_sem()).tolist() == [1]

    def test_four_covariate_model(self):
        sem = make_scenario("example2_limited").sem
        assert children_of_outcome(sem).tolist() == [2]

    def test_no_children(self):
        sem = SemModel(
            beta_star=np.array([1.0, 0.0]),
            b_yx=np.zeros(2),
            b_xx=np.zeros((2, 2)),
            eta_cov=np.eye(3),
        )
        assert children_of_outcome(sem).size == 0
