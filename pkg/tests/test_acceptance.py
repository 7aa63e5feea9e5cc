"""End-to-end acceptance suite.

Each test exercises one headline claim at a fixed tolerance and prints a
single PASS/FAIL line (run with ``pytest -s`` to see them).  The trend
criteria run the experiment harness at desk scale (20 replicates); the whole
module takes roughly 20-30 minutes on two cores.

Criteria:
     1. exact population regression table on the two-covariate chain
     2. identification feasible/infeasible certificates
     3. gamma-trend benchmark (error non-increasing, small at gamma=25)
     4. n-trend benchmark (log-log slope near -1/4)
     5. limited/weak/strong comparison against gradient-matching baselines
     6. equivalence of the two minimax objective displays
     7. envelope gradient vs finite differences
     8. stationarity-rate guarantee of the smoothed solver
     9. cross-algorithm consistency
    10. risk invariance and causal recovery at large gamma (population)
    11. limited-intervention identification via the minimization step
    12. polynomial-vs-exponential scaling profile
"""

import time

import numpy as np
import pytest

import negdro.harness as harness
from negdro import (
    InterventionMoments,
    SolverConfig,
    check_condition_heterogeneity,
    derive_seed,
    env_moments,
    exhaustive_invariance_search,
    inner_max_penalized,
    invariance_probe,
    make_scenario,
    phi_mu_gradient,
    phi_mu_value,
    population_moments,
    sample_scenario,
    smoothness_constant,
    solve_penalized,
    solve_subgradient,
)
from negdro.errors import NoInvariantSubsetError, TimeoutExceededError
from negdro.simulate import EnvironmentData
from negdro.solvers import _MomentStack

SEED = 20240501


def report(num, name, checks, elapsed, budget):
    """Print one acceptance line; fail with every violated sub-check named."""
    failures = [f"{label}: {detail}" for label, ok, detail in checks if not ok]
    if elapsed > budget:
        failures.append(f"runtime: {elapsed:.1f}s > {budget}s")
    status = "PASS" if not failures else "FAIL"
    print(f"[acceptance {num:02d}] {name}: {status} ({elapsed:.1f}s)")
    for label, ok, detail in checks:
        print(f"    {'ok  ' if ok else 'FAIL'} {label}: {detail}")
    assert not failures, f"criterion {num} ({name}): " + "; ".join(failures)


def gamma_ladder_solve(moments, gamma, n_iter, mu, init="erm", final_n_iter=None):
    """Fixed-gamma solves chained by warm starts (continuation in gamma)."""
    m_const = smoothness_constant(moments)
    stages = [g for g in (1.0, 3.0, 10.0, 30.0, 100.0, 300.0) if g < gamma] + [gamma]
    b = init
    for i, g in enumerate(stages):
        t_stage = n_iter if (final_n_iter is None or i < len(stages) - 1) else final_n_iter
        res = solve_penalized(
            moments,
            SolverConfig(gamma=g, n_iter=t_stage, mu=mu, step_size=1.0 / m_const, init=b),
        )
        b = res.b_hat
    return res


def population_moment_set(name, **kw):
    sc = make_scenario(name, **kw)
    return sc, [population_moments(sc.sem, e.intervention).to_env_moments() for e in sc.environments]


def means_by(table, column, values, method=None):
    out = []
    for v in values:
        errs = [
            r.l2_error
            for r in table.rows
            if getattr(r, column) == v
            and (method is None or r.method == method)
            and r.l2_error is not None
        ]
        out.append(float(np.mean(errs)) if errs else float("nan"))
    return out


def test_criterion_01_population_regression_table():
    t0 = time.perf_counter()
    checks = []
    sc = make_scenario("example1", sigmas=(1.0, 2.0))
    rows = {r.subset: r for r in invariance_probe(sc.sem, [e.intervention for e in sc.environments])}
    s2 = np.array([1.0, 4.0])

    cells = {
        (): (np.zeros((2, 2)), s2 + 1.0),
        (0,): (np.tile([1.0, 0.0], (2, 1)), np.ones(2)),
        (1,): (
            np.stack([np.zeros(2), (s2 + 1.0) / (2.0 * s2 + 1.0)], axis=1),
            (s2**2 + s2) / (2.0 * s2 + 1.0),
        ),
        (0, 1): (
            np.stack([s2 / (s2 + 1.0), 1.0 / (s2 + 1.0)], axis=1),
            s2 / (s2 + 1.0),
        ),
    }
    for subset, (coefs, risks) in cells.items():
        row = rows[subset]
        dc = float(np.abs(row.coefs - coefs).max())
        dr = float(np.abs(row.risks - risks).max())
        checks.append((f"coefficients S={subset}", dc <= 1e-9, f"max dev {dc:.2e}"))
        checks.append((f"risks S={subset}", dr <= 1e-9, f"max dev {dr:.2e}"))
    checks.append(("only S={0} invariant", [s for s, r in rows.items() if r.invariant] == [(0,)], ""))
    report(1, "population regression table", checks, time.perf_counter() - t0, 1.0)


def test_criterion_02_identification_certificates():
    t0 = time.perf_counter()
    one_each = InterventionMoments(
        np.stack([np.diag([1.0, 0, 0]), np.diag([0, 1.0, 0]), np.diag([0, 0, 1.0])])
    )
    cert_bad = check_condition_heterogeneity(one_each)
    combined = InterventionMoments(
        np.stack([np.diag([3.0, 3, 0]), np.diag([0, 0, 3.0]), np.diag([1.0, 1, 1])])
    )
    cert_good = check_condition_heterogeneity(combined)
    checks = [
        (
            "one-intervention-each infeasible",
            (not cert_bad.feasible) and cert_bad.lambda_hat <= 1e-6,
            f"lambda_hat={cert_bad.lambda_hat:.2e}",
        ),
        (
            "combined domination feasible",
            cert_good.feasible and cert_good.lambda_hat >= 1.0 / 6.0 - 1e-4,
            f"lambda_hat={cert_good.lambda_hat:.6f} vs 1/6",
        ),
    ]
    report(2, "identification certificates", checks, time.perf_counter() - t0, 2.0)


def test_criterion_03_gamma_trend():
    t0 = time.perf_counter()
    gammas = [0.0, 1.0, 2.0, 5.0, 10.0, 25.0]
    config = harness.ExperimentConfig.from_json(
        {
            "schema_version": 1,
            "scenario": {"name": "section6", "params": {"p": 5}},
            "n": 20000,
            "replicates": 20,
            "seed": SEED,
            "methods": ["negdro_penalized"],
            "solver": {"mu": 0.01, "n_iter": 20000},
            "sweep": {"param": "gamma", "values": gammas},
        }
    )
    table = harness.run(config)
    means = means_by(table, "gamma", gammas)
    monotone = all(b <= a + 0.01 for a, b in zip(means, means[1:]))
    checks = [
        ("mean error non-increasing in gamma (0.01 slack)", monotone, f"means={np.round(means, 4).tolist()}"),
        ("mean error at gamma=25 <= 0.15", means[-1] <= 0.15, f"{means[-1]:.4f}"),
    ]
    report(3, "gamma-trend benchmark", checks, time.perf_counter() - t0, 600.0)


def test_criterion_04_n_trend():
    t0 = time.perf_counter()
    ns = [500, 2000, 8000, 20000]
    config = harness.ExperimentConfig.from_json(
        {
            "schema_version": 1,
            "scenario": {"name": "section6", "params": {"p": 5}},
            "replicates": 20,
            "seed": SEED,
            "methods": ["negdro_penalized"],
            "solver": {"gamma": 20.0, "mu": 1e-4, "n_iter": 20000},
            "sweep": {"param": "n", "values": ns},
        }
    )
    table = harness.run(config)
    means = means_by(table, "n", ns)
    slope = float(np.polyfit(np.log(ns), np.log(means), 1)[0])
    checks = [
        (
            "log-log slope in [-0.35, -0.15]",
            -0.35 <= slope <= -0.15,
            f"slope={slope:.3f}, means={np.round(means, 4).tolist()}",
        )
    ]
    report(4, "n-trend benchmark", checks, time.perf_counter() - t0, 600.0)


def test_criterion_05_limited_weak_strong():
    t0 = time.perf_counter()
    gammas = [0.0, 10.0, 30.0, 60.0]
    mus = {"example2_limited": 0.1, "example2_weak": 0.003, "example2_strong": 0.003}
    tables = {}
    for variant, mu in mus.items():
        config = harness.ExperimentConfig.from_json(
            {
                "schema_version": 1,
                "scenario": {"name": variant},
                "n": 10000,
                "replicates": 20,
                "seed": SEED,
                "methods": ["negdro_penalized", "causal_dantzig", "drig"],
                "solver": {"mu": mu, "n_iter": 20000},
                "sweep": {"param": "gamma", "values": gammas},
            }
        )
        tables[variant] = harness.run(config)

    lim = tables["example2_limited"]
    lim_cd_rows = [r for r in lim.rows if r.method == "causal_dantzig"]
    lim_cd_errs = [r.l2_error for r in lim_cd_rows if r.l2_error is not None]
    lim_cd_fail = (not lim_cd_errs) or float(np.mean(lim_cd_errs)) > 0.5
    lim_cd_detail = (
        "all replicates singular"
        if not lim_cd_errs
        else f"mean err {float(np.mean(lim_cd_errs)):.2f} > 0.5"
    )
    lim_drig = means_by(lim, "gamma", gammas, method="drig")
    lim_neg = means_by(lim, "gamma", gammas, method="negdro_penalized")

    st = tables["example2_strong"]
    st_cd = float(np.mean([r.l2_error for r in st.rows if r.method == "causal_dantzig"]))
    st_drig = means_by(st, "gamma", gammas, method="drig")
    st_neg = means_by(st, "gamma", gammas, method="negdro_penalized")

    checks = [
        (
            "limited: moment-difference method degenerates",
            lim_cd_fail,
            lim_cd_detail,
        ),
        (
            "limited: drig error grows with gamma",
            lim_drig[-1] > lim_drig[0],
            f"err(60)={lim_drig[-1]:.3f} vs err(0)={lim_drig[0]:.3f}",
        ),
        (
            "limited: negdro error at gamma=60 <= 0.2",
            lim_neg[-1] <= 0.2,
            f"err(60)={lim_neg[-1]:.4f}",
        ),
        ("strong: dantzig <= 0.15", st_cd <= 0.15, f"{st_cd:.4f}"),
        ("strong: drig at gamma=60 <= 0.15", st_drig[-1] <= 0.15, f"{st_drig[-1]:.4f}"),
        ("strong: negdro at gamma=60 <= 0.15", st_neg[-1] <= 0.15, f"{st_neg[-1]:.4f}"),
    ]
    report(5, "limited/weak/strong comparison", checks, time.perf_counter() - t0, 900.0)


def _random_moments(rng, n_envs, p=3):
    out = []
    for _ in range(n_envs):
        x = rng.standard_normal((60, p))
        y = x @ rng.standard_normal(p) + rng.standard_normal(60)
        out.append(env_moments(EnvironmentData(x=x, y=y)))
    return out


def test_criterion_06_objective_form_equivalence():
    from negdro import objective_forms_agree

    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        moments = _random_moments(rng, int(rng.integers(2, 6)))
        b = rng.standard_normal(3) * rng.uniform(0.1, 3)
        gamma = rng.uniform(0.0, 50.0)
        lhs, rhs = objective_forms_agree(moments, b, gamma)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(lhs)))
    checks = [("relative gap <= 1e-10 over 1000 draws", worst <= 1e-10, f"worst={worst:.2e}")]
    report(6, "objective form equivalence", checks, time.perf_counter() - t0, 5.0)


def test_criterion_07_envelope_gradient():
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 1)
    h = 1e-6
    checked, worst = 0, 0.0
    while checked < 50:
        moments = _random_moments(rng, int(rng.integers(2, 5)))
        stack = _MomentStack(moments)
        b = rng.standard_normal(3)
        gamma = rng.uniform(0.0, 10.0)
        mu = rng.uniform(0.05, 1.0)
        # stay away from weight-switch boundaries: active set stable under probes
        base = inner_max_penalized(stack.risks(b), gamma, mu)[0] > 0
        stable = True
        for j in range(3):
            for sign in (1.0, -1.0):
                bp = b.copy()
                bp[j] += 2 * h * sign
                if not np.array_equal(inner_max_penalized(stack.risks(bp), gamma, mu)[0] > 0, base):
                    stable = False
        if not stable:
            continue
        checked += 1
        grad = phi_mu_gradient(moments, b, gamma, mu)
        fd = np.zeros(3)
        for j in range(3):
            ej = np.zeros(3)
            ej[j] = h
            fd[j] = (
                phi_mu_value(moments, b + ej, gamma, mu) - phi_mu_value(moments, b - ej, gamma, mu)
            ) / (2 * h)
        rel = float(np.abs(grad - fd).max() / max(1.0, np.abs(fd).max()))
        worst = max(worst, rel)
    checks = [("relative error <= 1e-5 on 50 instances", worst <= 1e-5, f"worst={worst:.2e}")]
    report(7, "envelope gradient vs finite differences", checks, time.perf_counter() - t0, 5.0)


def test_criterion_08_stationarity_rate():
    t0 = time.perf_counter()
    sc = make_scenario("section6", p=5, n=5000, seed=SEED)
    moments = sample_scenario(sc).moments()
    m_const = smoothness_constant(moments)
    gamma = 20.0
    checks = []
    for n_iter in (100, 1000, 10000):
        res = solve_penalized(moments, SolverConfig(gamma=gamma, n_iter=n_iter, init="zero"))
        mu = m_const / np.sqrt(n_iter)
        phi0 = phi_mu_value(moments, np.zeros(5), gamma, mu)
        bound = float(np.sqrt(4.0 * (m_const + m_const**2 / mu) * max(phi0, 0.0) / n_iter))
        achieved = float(np.nanmin(res.criterion_trace[1:]))
        checks.append(
            (f"T={n_iter}: min grad <= bound", achieved <= bound, f"{achieved:.3e} <= {bound:.3e}")
        )
    report(8, "stationarity-rate guarantee", checks, time.perf_counter() - t0, 120.0)


def test_criterion_09_cross_algorithm_consistency():
    t0 = time.perf_counter()
    sc = make_scenario("section6", p=5, n=20000, seed=SEED)
    moments = sample_scenario(sc).moments()
    m_const = smoothness_constant(moments)
    res1 = solve_penalized(
        moments, SolverConfig(gamma=20.0, n_iter=1_000_000, step_size=1.0 / m_const)
    )
    res2 = solve_subgradient(
        moments,
        SolverConfig(gamma=20.0, n_iter=20000, step_size=1.0 / m_const, prox_inner_iters=200),
    )
    d = float(np.linalg.norm(res1.b_hat - res2.b_hat))
    checks = [("outputs within 0.1", d <= 0.1, f"distance={d:.4f}")]
    report(9, "cross-algorithm consistency", checks, time.perf_counter() - t0, 300.0)


def test_criterion_10_population_risk_invariance():
    t0 = time.perf_counter()
    sc, pop = population_moment_set("section6", p=5)
    res = gamma_ladder_solve(pop, 1000.0, n_iter=60000, mu=1e-4)
    stack = _MomentStack(pop)
    risks = stack.risks(res.b_hat)
    gap = float(risks.max() - risks.min())
    err = float(np.linalg.norm(res.b_hat - sc.sem.beta_star))
    checks = [
        ("max-min risk gap <= 1e-2", gap <= 1e-2, f"gap={gap:.2e}"),
        ("distance to causal coefficients <= 1e-2", err <= 1e-2, f"err={err:.2e}"),
    ]
    report(10, "population risk invariance at large gamma", checks, time.perf_counter() - t0, 120.0)


def test_criterion_11_limited_intervention_identification():
    t0 = time.perf_counter()
    sc, pop = population_moment_set("section6_limited", p=8)
    res = gamma_ladder_solve(pop, 1000.0, n_iter=60000, mu=1e-4, final_n_iter=100000)
    err = float(np.linalg.norm(res.b_hat - sc.sem.beta_star))
    rows = invariance_probe(sc.sem, [e.intervention for e in sc.environments])
    invariant = [r.subset for r in rows if r.invariant]
    checks = [
        ("solve at gamma=1e3 within 5e-2", err <= 5e-2, f"err={err:.2e}"),
        (
            "more than one risk-invariant subset",
            len(invariant) > 1,
            f"{len(invariant)} subsets, e.g. {invariant[:4]}",
        ),
    ]
    report(11, "limited-intervention identification", checks, time.perf_counter() - t0, 300.0)


def test_criterion_12_scaling_profile():
    t0 = time.perf_counter()

    def negdro_runtime(p):
        sc = make_scenario("section6", p=p, n=5000, seed=SEED)
        moments = sample_scenario(sc).moments()
        m_const = smoothness_constant(moments)
        cfg = SolverConfig(gamma=20.0, n_iter=5000, mu=1e-4, step_size=1.0 / m_const)
        start = time.perf_counter()
        solve_penalized(moments, cfg)
        return time.perf_counter() - start

    t_small, t_big = negdro_runtime(5), negdro_runtime(120)

    def search_runtime(p, cap=None):
        sc = make_scenario("section6_limited", p=p, n=5000, seed=SEED)
        moments = sample_scenario(sc).moments()
        deadline = None if cap is None else time.monotonic() + cap
        start = time.perf_counter()
        try:
            exhaustive_invariance_search(moments, threshold=5.0, deadline=deadline)
        except (NoInvariantSubsetError, TimeoutExceededError):
            pass
        return time.perf_counter() - start

    s10 = search_runtime(10)
    s20 = search_runtime(20, cap=300.0)

    checks = [
        (
            "solver runtime p=120 <= 50x p=5",
            t_big <= 50.0 * t_small,
            f"{t_big:.2f}s vs {t_small:.2f}s (x{t_big / t_small:.1f})",
        ),
        (
            "exhaustive search p=20 >= 100x p=10",
            s20 >= 100.0 * s10,
            f"{s20:.2f}s vs {s10:.3f}s (x{s20 / s10:.0f})",
        ),
    ]
    report(12, "scaling profile", checks, time.perf_counter() - t0, 600.0)
