"""Experiment engine: JSON configs, method sweeps, CSV results and SVG plots.

A config names a scenario (builtin or inline SEM), the methods to run, solver
settings, an optional sweep over ``gamma``/``n``/``p`` and a replicate count.
``run`` samples fresh data per (sweep value, replicate) cell with a seed
derived from the master seed, times every method, and records the distance of
each estimate to the scenario's true coefficients.  Results serialize to a
fixed-schema CSV and render to standalone SVG line charts.
"""

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines
from ._validation import as_matrix, as_vector
from .errors import ConfigError, CsvParseError, EmptySelectionError, NegdroError, TimeoutExceededError
from .model import EnvironmentSpec, InterventionSpec, Scenario, SemModel
from .risk import smoothness_constant
from .simulate import derive_seed, make_scenario, sample_scenario, scenario_names
from .solvers import SolverConfig, solve_penalized, solve_subgradient

SCHEMA_VERSION = 1

METHODS = (
    "negdro_penalized",
    "negdro_subgradient",
    "erm",
    "causal_dantzig",
    "drig",
    "exhaustive",
)

CSV_HEADER = "method,replicate,gamma,n,p,l2_error,runtime_ms,status,selected_subset"


# ---------------------------------------------------------------------------
# Scenario (de)serialization
# ---------------------------------------------------------------------------

def intervention_to_json(iv):
    out = {"kind": iv.kind}
    if iv.kind == "none":
        return out
    if iv.kind == "fixed":
        out["shift"] = iv.mean.tolist()
        return out
    if iv.kind == "gaussian":
        out["cov"] = iv.cov.tolist()
        if iv.mean.any():
            out["mean"] = iv.mean.tolist()
        return out
    if iv.kind == "uniform":
        out["half_widths"] = iv.half_widths.tolist()
        return out
    out["mean"] = iv.mean.tolist()
    out["cov"] = iv.cov.tolist()
    out["half_widths"] = iv.half_widths.tolist()
    return out


def intervention_from_json(obj, p, path):
    try:
        kind = obj.get("kind", "none")
        if kind == "none":
            return InterventionSpec.none(p)
        if kind == "fixed":
            return InterventionSpec.fixed(as_vector(obj["shift"], p=p, name="shift"))
        if kind == "gaussian":
            cov = as_matrix(obj["cov"], shape=(p, p), name="cov")
            mean = obj.get("mean")
            return InterventionSpec.gaussian(cov, mean=None if mean is None else mean)
        if kind == "uniform":
            return InterventionSpec.uniform(as_vector(obj["half_widths"], p=p, name="half_widths"))
        if kind == "mixed":
            return InterventionSpec.mixed(
                p,
                mean=obj.get("mean"),
                cov=obj.get("cov"),
                half_widths=obj.get("half_widths"),
            )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc}") from exc
    except (ValueError, NegdroError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    raise ConfigError(f"{path}.kind: unknown intervention kind {kind!r}")


def scenario_to_json(scenario):
    """Serialize a scenario to the inline JSON schema (round-trips exactly)."""
    sem = scenario.sem
    return {
        "sem": {
            "beta_star": sem.beta_star.tolist(),
            "b_yx": sem.b_yx.tolist(),
            "b_xx": sem.b_xx.tolist(),
            "eta_cov": sem.eta_cov.tolist(),
        },
        "environments": [
            {"n": env.n, "intervention": intervention_to_json(env.intervention)}
            for env in scenario.environments
        ],
        "seed": scenario.seed,
    }


def scenario_from_json(obj, path="scenario"):
    """Parse an inline scenario; raises ConfigError naming the offending field."""
    try:
        sem_obj = obj["sem"]
        beta = as_vector(sem_obj["beta_star"], name="beta_star")
        p = beta.shape[0]
        sem = SemModel(
            beta_star=beta,
            b_yx=as_vector(sem_obj["b_yx"], p=p, name="b_yx"),
            b_xx=as_matrix(sem_obj["b_xx"], shape=(p, p), name="b_xx"),
            eta_cov=as_matrix(sem_obj["eta_cov"], shape=(p + 1, p + 1), name="eta_cov"),
        )
        envs = []
        for i, env_obj in enumerate(obj["environments"]):
            envs.append(
                EnvironmentSpec(
                    n=int(env_obj["n"]),
                    intervention=intervention_from_json(
                        env_obj["intervention"], p, f"{path}.environments[{i}].intervention"
                    ),
                )
            )
        return Scenario(sem=sem, environments=envs, seed=int(obj.get("seed", 0)))
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"{path}: missing field {exc}") from exc
    except (TypeError, ValueError, NegdroError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """Validated experiment description; see ``from_json`` for the schema."""

    scenario_name: str | None
    scenario_params: dict
    inline_scenario: dict | None
    methods: list
    solver: dict
    sweep_param: str | None
    sweep_values: list
    replicates: int
    seed: int
    n: int
    time_limit_secs: float | None = None
    oracle_select: bool = False

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict):
            raise ConfigError("config: must be a JSON object")
        version = obj.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
        known = {
            "schema_version", "scenario", "methods", "solver", "sweep",
            "replicates", "seed", "n", "time_limit_secs", "oracle_select",
        }
        for key in obj:
            if key not in known:
                raise ConfigError(f"{key}: unknown configuration field")

        scen = obj.get("scenario")
        if not isinstance(scen, dict):
            raise ConfigError("scenario: required object with 'name' or 'inline'")
        name, params, inline = None, {}, None
        if "inline" in scen:
            inline = scen["inline"]
            scenario_from_json(inline, path="scenario.inline")
        elif "name" in scen:
            name = scen["name"]
            if name not in scenario_names():
                raise ConfigError(f"scenario.name: unknown scenario {name!r}")
            params = dict(scen.get("params", {}))
        else:
            raise ConfigError("scenario: needs either 'name' or 'inline'")

        methods = obj.get("methods", ["negdro_penalized"])
        if not isinstance(methods, list) or not methods:
            raise ConfigError("methods: must be a non-empty list")
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"methods: unknown method {m!r} (choose from {METHODS})")

        solver = dict(obj.get("solver", {}))
        sweep = obj.get("sweep")
        sweep_param, sweep_values = None, []
        if sweep is not None:
            if not isinstance(sweep, dict):
                raise ConfigError("sweep: must be an object with 'param' and 'values'")
            sweep_param = sweep.get("param")
            if sweep_param not in ("gamma", "n", "p"):
                raise ConfigError(f"sweep.param: must be gamma, n or p, got {sweep_param!r}")
            sweep_values = list(sweep.get("values", []))
            if not sweep_values:
                raise ConfigError("sweep.values: must be a non-empty list")
            if any(b <= a for a, b in zip(sweep_values, sweep_values[1:])):
                raise ConfigError("sweep.values: must be strictly increasing")
            if sweep_param == "p" and inline is not None:
                raise ConfigError("sweep.param: cannot sweep p over an inline scenario")

        replicates = int(obj.get("replicates", 1))
        if replicates < 1:
            raise ConfigError("replicates: must be >= 1")
        time_limit = obj.get("time_limit_secs")
        if time_limit is not None and time_limit <= 0:
            raise ConfigError("time_limit_secs: must be positive")
        return cls(
            scenario_name=name,
            scenario_params=params,
            inline_scenario=inline,
            methods=list(methods),
            solver=solver,
            sweep_param=sweep_param,
            sweep_values=sweep_values,
            replicates=replicates,
            seed=int(obj.get("seed", 0)),
            n=int(obj.get("n", 10000)),
            time_limit_secs=time_limit,
            oracle_select=bool(obj.get("oracle_select", False)),
        )

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                obj = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        return cls.from_json(obj)

    def build_scenario(self, n=None, p=None, seed=None):
        if self.inline_scenario is not None:
            scenario = scenario_from_json(self.inline_scenario)
            if n is not None:
                scenario = replace(
                    scenario,
                    environments=[replace(env, n=n) for env in scenario.environments],
                )
            if seed is not None:
                scenario = replace(scenario, seed=seed)
            return scenario
        params = dict(self.scenario_params)
        if p is not None:
            params["p"] = p
        return make_scenario(
            self.scenario_name,
            n=n if n is not None else self.n,
            seed=seed if seed is not None else self.seed,
            **params,
        )


# ---------------------------------------------------------------------------
# Result table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    method: str
    replicate: int
    gamma: float
    n: int
    p: int
    l2_error: float | None
    runtime_ms: float
    status: str
    selected_subset: str = ""


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return isinstance(other, ResultTable) and self.rows == other.rows

    def column(self, name):
        return [getattr(r, name) for r in self.rows]


def _fmt_float(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def write_csv(table, path):
    """Write the fixed-schema CSV (LF endings, UTF-8, lossless floats)."""
    lines = [CSV_HEADER]
    for r in table.rows:
        lines.append(
            ",".join(
                [
                    r.method,
                    str(r.replicate),
                    _fmt_float(r.gamma),
                    str(r.n),
                    str(r.p),
                    _fmt_float(r.l2_error),
                    _fmt_float(r.runtime_ms),
                    r.status,
                    r.selected_subset,
                ]
            )
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Parse a results CSV; malformed rows raise CsvParseError with the line number."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise CsvParseError(f"{path}:1: header must be exactly {CSV_HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 9:
            raise CsvParseError(f"{path}:{lineno}: expected 9 fields, got {len(parts)}")
        try:
            rows.append(
                ResultRow(
                    method=parts[0],
                    replicate=int(parts[1]),
                    gamma=float(parts[2]) if parts[2] else float("nan"),
                    n=int(parts[3]),
                    p=int(parts[4]),
                    l2_error=float(parts[5]) if parts[5] else None,
                    runtime_ms=float(parts[6]) if parts[6] else float("nan"),
                    status=parts[7],
                    selected_subset=parts[8],
                )
            )
        except ValueError as exc:
            raise CsvParseError(f"{path}:{lineno}: {exc}") from exc
    return ResultTable(rows=rows)


# ---------------------------------------------------------------------------
# Method execution
# ---------------------------------------------------------------------------

def _solver_config(solver, gamma, n_iter_default=60000):
    """Tuned defaults for experiment runs; every field overridable via JSON."""
    return SolverConfig(
        gamma=gamma,
        mu=solver.get("mu"),
        n_iter=int(solver.get("n_iter", n_iter_default)),
        step_size=solver.get("step_size"),
        c_step=solver.get("c_step", 1.0),
        upsilon=solver.get("upsilon"),
        prox_inner_iters=int(solver.get("prox_inner_iters", 200)),
        prox_tol=solver.get("prox_tol", 1e-8),
        init=solver.get("init", "erm"),
    )


def _run_negdro(moments, gamma, solver, algorithm):
    """One NegDRO fit with practical defaults: step 1/M, small mu, warm ladder.

    The worst-case step rule is too conservative to traverse the landscape
    in desk-scale budgets, so experiment runs default to step ``1/M``, a
    small ridge ``mu`` and continuation in ``gamma`` (each stage warm-starts
    the next); all three are plain solver configurations, overridable per
    run.
    """
    m_const = smoothness_constant(moments)
    cfg = _solver_config(solver, gamma)
    if cfg.step_size is None:
        cfg.step_size = 1.0 / m_const
    if cfg.mu is None:
        cfg.mu = 1e-4
    ladder = solver.get("gamma_ladder", "auto")
    if ladder == "auto":
        stages = [g for g in (1.0, 3.0, 10.0, 30.0, 100.0, 300.0) if g < gamma] + [gamma]
    elif ladder:
        stages = [g for g in ladder if g < gamma] + [gamma]
    else:
        stages = [gamma]
    solve = solve_penalized if algorithm == "penalized" else solve_subgradient
    init = cfg.init
    for g in stages:
        stage_cfg = replace(cfg, gamma=g, init=init)
        result = solve(moments, stage_cfg)
        init = result.b_hat
    return result.b_hat


def run_method(method, data, gamma, solver, deadline=None):
    """Execute one method on sampled data; returns (b_hat, status, subset)."""
    moments = data.moments()
    try:
        if method == "negdro_penalized":
            return _run_negdro(moments, gamma, solver, "penalized"), "ok", ""
        if method == "negdro_subgradient":
            return _run_negdro(moments, gamma, solver, "subgradient"), "ok", ""
        if method == "erm":
            res = baselines.erm(moments)
        elif method == "causal_dantzig":
            res = baselines.causal_dantzig(moments, pairing=solver.get("pairing", "first_vs_rest"))
        elif method == "drig":
            res = baselines.drig(
                moments,
                gamma=gamma,
                ref_env=int(solver.get("ref_env", 0)),
                weights=solver.get("drig_weights"),
                require_convex=bool(solver.get("drig_require_convex", False)),
            )
        elif method == "exhaustive":
            res = baselines.exhaustive_invariance_search(
                moments,
                threshold=solver.get("threshold", 0.05),
                max_p=int(solver.get("max_p", 20)),
                deadline=deadline,
            )
        else:
            raise ConfigError(f"unknown method {method!r}")
        subset = "" if res.subset is None else "|".join(str(i) for i in res.subset)
        return res.b_hat, res.status, subset
    except TimeoutExceededError:
        return None, "timeout", ""
    except NegdroError as exc:
        return None, f"error:{type(exc).__name__}", ""


def _worker_count():
    cap = os.environ.get("NEGDRO_THREADS")
    if cap is not None:
        return max(1, int(cap))
    return 1


def _run_cell(config, sweep_ix, replicate):
    """Run every method on one (sweep value, replicate) cell."""
    gamma = float(config.solver.get("gamma", 20.0))
    n, p = config.n, None
    if config.sweep_param == "gamma":
        gamma = float(config.sweep_values[sweep_ix])
    elif config.sweep_param == "n":
        n = int(config.sweep_values[sweep_ix])
    elif config.sweep_param == "p":
        p = int(config.sweep_values[sweep_ix])
    seed = derive_seed(config.seed, sweep_ix, replicate)
    scenario = config.build_scenario(n=n, p=p, seed=seed)
    data = sample_scenario(scenario)
    beta = scenario.sem.beta_star
    deadline = (
        time.monotonic() + config.time_limit_secs if config.time_limit_secs is not None else None
    )
    rows = []
    for method in config.methods:
        t0 = time.perf_counter()
        if deadline is not None and time.monotonic() > deadline:
            b_hat, status, subset = None, "timeout", ""
        else:
            b_hat, status, subset = run_method(method, data, gamma, config.solver, deadline)
        runtime_ms = (time.perf_counter() - t0) * 1e3
        err = None if b_hat is None else float(np.linalg.norm(b_hat - beta))
        rows.append(
            ResultRow(
                method=method,
                replicate=replicate,
                gamma=gamma,
                n=scenario.environments[0].n,
                p=scenario.sem.p,
                l2_error=err,
                runtime_ms=runtime_ms,
                status=status,
                selected_subset=subset,
            )
        )
    return (sweep_ix, replicate), rows


def run(config):
    """Execute the configured experiment and return its result table.

    Rows appear in deterministic order (sweep value, replicate, method) no
    matter how the work pool schedules cells; identical (config, seed) give
    identical tables within one build.
    """
    sweep_ixs = range(len(config.sweep_values)) if config.sweep_param else [0]
    cells = [(s, r) for s in sweep_ixs for r in range(config.replicates)]
    workers = _worker_count()
    results = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for key, rows in pool.map(lambda c: _run_cell(config, *c), cells):
                results[key] = rows
    else:
        for cell in cells:
            key, rows = _run_cell(config, *cell)
            results[key] = rows
    table = ResultTable()
    for cell in cells:
        table.rows.extend(results[cell])
    if config.oracle_select and config.sweep_param == "gamma":
        table.rows.extend(_oracle_rows(config, table))
    return table


def _oracle_rows(config, table):
    """Per replicate and method, replay the row whose gamma minimized the error.

    Emitted with the method name suffixed ``:oracle`` so ordinary rows stay
    untouched; mirrors hyperparameter selection done with knowledge of the
    truth.
    """
    extra = []
    for method in config.methods:
        for rep in range(config.replicates):
            candidates = [
                r
                for r in table.rows
                if r.method == method and r.replicate == rep and r.l2_error is not None
            ]
            if not candidates:
                continue
            best = min(candidates, key=lambda r: r.l2_error)
            extra.append(
                ResultRow(
                    method=f"{method}:oracle",
                    replicate=rep,
                    gamma=best.gamma,
                    n=best.n,
                    p=best.p,
                    l2_error=best.l2_error,
                    runtime_ms=best.runtime_ms,
                    status=best.status,
                    selected_subset=best.selected_subset,
                )
            )
    return extra


# ---------------------------------------------------------------------------
# SVG plotting
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2")
_W, _H = 640, 420
_ML, _MR, _MT, _MB = 70, 20, 20, 50


def _axis_ticks(lo, hi, log):
    if log:
        lo_e, hi_e = math.floor(math.log10(lo)), math.ceil(math.log10(hi))
        return [10.0**e for e in range(lo_e, hi_e + 1)]
    span = hi - lo or abs(hi) or 1.0
    step = 10.0 ** math.floor(math.log10(span / 4))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= 6:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    ticks = []
    while start <= hi + 1e-12 * span:
        ticks.append(start)
        start += step
    return ticks


def plot_svg(table, spec, path):
    """Render a deterministic line chart of aggregated table columns.

    ``spec`` holds ``x``, ``y``, ``group_by`` column names plus optional
    ``log_x``/``log_y`` booleans.  Rows with missing ``y`` are dropped;
    several rows at one (group, x) aggregate by mean.  Non-positive values
    under a log axis raise EmptySelectionError naming the offending rows.
    """
    x_col, y_col = spec["x"], spec["y"]
    group_col = spec.get("group_by")
    log_x, log_y = bool(spec.get("log_x")), bool(spec.get("log_y"))

    points = {}
    bad = []
    for ix, row in enumerate(table.rows):
        x = getattr(row, x_col)
        y = getattr(row, y_col)
        if y is None or (isinstance(y, float) and math.isnan(y)):
            continue
        x, y = float(x), float(y)
        if (log_x and x <= 0) or (log_y and y <= 0):
            bad.append(ix)
            continue
        group = str(getattr(row, group_col)) if group_col else "all"
        points.setdefault(group, {}).setdefault(x, []).append(y)
    if bad:
        raise EmptySelectionError(
            f"log axis cannot show non-positive values in rows {bad[:10]}"
        )
    if not points:
        raise EmptySelectionError("no plottable rows after filtering")

    series = {
        g: sorted((x, sum(ys) / len(ys)) for x, ys in xs.items()) for g, xs in sorted(points.items())
    }
    tx = (lambda v: math.log10(v)) if log_x else (lambda v: v)
    ty = (lambda v: math.log10(v)) if log_y else (lambda v: v)
    xs_all = [x for s in series.values() for x, _ in s]
    ys_all = [y for s in series.values() for _, y in s]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_lo == x_hi:
        x_lo, x_hi = (x_lo / 2.0, x_hi * 2.0) if log_x else (x_lo - 0.5, x_hi + 0.5)
    if y_lo == y_hi:
        y_lo, y_hi = (y_lo / 2.0, y_hi * 2.0) if log_y else (y_lo - 0.5, y_hi + 0.5)

    def sx(v):
        t0, t1 = tx(x_lo), tx(x_hi)
        return _ML + (tx(v) - t0) / (t1 - t0) * (_W - _ML - _MR)

    def sy(v):
        t0, t1 = ty(y_lo), ty(y_hi)
        return _H - _MB - (ty(v) - t0) / (t1 - t0) * (_H - _MT - _MB)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
    ]
    for t in _axis_ticks(x_lo, x_hi, log_x):
        if x_lo <= t <= x_hi:
            x = sx(t)
            parts.append(
                f'<line x1="{x:.2f}" y1="{_H - _MB}" x2="{x:.2f}" y2="{_H - _MB + 5}" stroke="black"/>'
            )
            parts.append(
                f'<text x="{x:.2f}" y="{_H - _MB + 18}" font-size="11" text-anchor="middle">{t:g}</text>'
            )
    for t in _axis_ticks(y_lo, y_hi, log_y):
        if y_lo <= t <= y_hi:
            y = sy(t)
            parts.append(f'<line x1="{_ML - 5}" y1="{y:.2f}" x2="{_ML}" y2="{y:.2f}" stroke="black"/>')
            parts.append(
                f'<text x="{_ML - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{t:g}</text>'
            )
    parts.append(
        f'<text x="{(_ML + _W - _MR) / 2:.2f}" y="{_H - 12}" font-size="13" '
        f'text-anchor="middle">{x_col}</text>'
    )
    parts.append(
        f'<text x="18" y="{(_MT + _H - _MB) / 2:.2f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 18 {(_MT + _H - _MB) / 2:.2f})">{y_col}</text>'
    )
    for i, (group, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = _MT + 16 + 16 * i
        parts.append(
            f'<line x1="{_W - _MR - 130}" y1="{ly - 4}" x2="{_W - _MR - 105}" y2="{ly - 4}" '
            f'stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{_W - _MR - 100}" y="{ly}" font-size="11">{group}</text>')
    parts.append("</svg>")
    payload = "\n".join(parts) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(payload)
    return path
