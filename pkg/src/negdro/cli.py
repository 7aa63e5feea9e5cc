"""Command-line interface: run experiments, check identification, plot results.

Exit codes: 0 on success, 1 on configuration problems (bad JSON, unknown
fields, missing files), 2 on runtime failures.  Diagnostics go to stderr.
"""

import argparse
import json
import sys

import numpy as np

from . import harness
from .errors import ConfigError, NegdroError
from .identify import (
    InterventionMoments,
    check_condition_heterogeneity,
    check_condition_relaxed,
    invariance_probe,
)
from .model import children_of_outcome
from .simulate import scenario_names


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="negdro",
        description="Multi-environment causal invariance learning experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True, help="output CSV path")

    p_sweep = sub.add_parser("sweep", help="run a config with a parameter sweep override")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--param", required=True, choices=["gamma", "n", "p"])
    p_sweep.add_argument("--values", required=True, help="comma-separated increasing values")
    p_sweep.add_argument("--out", required=True)

    p_check = sub.add_parser("check-id", help="print identification certificates as JSON")
    p_check.add_argument("--config", required=True)

    p_probe = sub.add_parser("probe", help="print the population invariance table as CSV")
    p_probe.add_argument("--config", required=True)

    p_plot = sub.add_parser("plot", help="render a results CSV to an SVG line chart")
    p_plot.add_argument("--in", dest="infile", required=True)
    p_plot.add_argument("--x", required=True)
    p_plot.add_argument("--y", required=True)
    p_plot.add_argument("--group", default=None)
    p_plot.add_argument("--logx", action="store_true")
    p_plot.add_argument("--logy", action="store_true")
    p_plot.add_argument("--out", required=True)

    sub.add_parser("scenarios", help="list builtin scenario names")
    return parser


def _cmd_run(args):
    config = harness.ExperimentConfig.from_file(args.config)
    table = harness.run(config)
    harness.write_csv(table, args.out)
    print(f"wrote {len(table)} rows to {args.out}")
    return 0


def _cmd_sweep(args):
    config = harness.ExperimentConfig.from_file(args.config)
    try:
        values = [float(v) for v in args.values.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"--values: {exc}") from exc
    if not values or any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError("--values: need a strictly increasing comma-separated list")
    if args.param in ("n", "p"):
        values = [int(v) for v in values]
    config.sweep_param = args.param
    config.sweep_values = values
    table = harness.run(config)
    harness.write_csv(table, args.out)
    print(f"wrote {len(table)} rows to {args.out}")
    return 0


def _cmd_check_id(args):
    config = harness.ExperimentConfig.from_file(args.config)
    scenario = config.build_scenario()
    im = InterventionMoments.from_scenario(scenario)
    report = {"heterogeneity": check_condition_heterogeneity(im).to_dict()}
    children = children_of_outcome(scenario.sem)
    if children.size:
        eta_x = scenario.sem.eta_cov[1:, 1:]
        eps_cov = np.stack([eta_x + d for d in im.d_mats])
        report["relaxed"] = check_condition_relaxed(im, children, eps_cov).to_dict()
        report["relaxed"]["children"] = children.tolist()
    else:
        report["relaxed"] = {"error": "outcome has no direct children; condition is vacuous"}
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _cmd_probe(args):
    config = harness.ExperimentConfig.from_file(args.config)
    scenario = config.build_scenario()
    iv_specs = [env.intervention for env in scenario.environments]
    rows = invariance_probe(scenario.sem, iv_specs)
    n_envs = len(scenario.environments)
    risk_cols = ",".join(f"risk_env{e}" for e in range(n_envs))
    print(f"subset,{risk_cols},gap,coef_spread,invariant")
    for row in rows:
        subset = "|".join(str(i) for i in row.subset)
        risks = ",".join(repr(float(r)) for r in row.risks)
        print(f"{subset},{risks},{row.gap!r},{row.coef_spread!r},{int(row.invariant)}")
    return 0


def _cmd_plot(args):
    table = harness.read_csv(args.infile)
    spec = {
        "x": args.x,
        "y": args.y,
        "group_by": args.group,
        "log_x": args.logx,
        "log_y": args.logy,
    }
    harness.plot_svg(table, spec, args.out)
    print(f"wrote {args.out}")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "check-id":
            return _cmd_check_id(args)
        if args.command == "probe":
            return _cmd_probe(args)
        if args.command == "plot":
            return _cmd_plot(args)
        if args.command == "scenarios":
            for name in scenario_names():
                print(name)
            return 0
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NegdroError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
