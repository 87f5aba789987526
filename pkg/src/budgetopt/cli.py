"""Command-line harness.

Subcommands: ``scenario gen``, ``solve``, ``bench``, ``multi``, ``oracle``.
Each accepts an optional JSON config file as its first positional argument;
explicit flags override config values, which override defaults.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any

import numpy as np

from .baselines import run_baseline
from .core import BudgetOptError, InvalidProblem, assignment_value, discrete_cost
from .harness import METHODS, BenchJob, expand_methods, run_jobs, run_method, tuned_lambda
from .knapsack import GridTooLarge, Infeasible, solve_oracle
from .optim import RcoConfig, run_rco_multi
from .reporting import SummaryRow, summary_csv, violation_table_csv
from .scenarios import (FAMILIES, GenerationFailed, ScenarioSpec, generate, generate_multi,
                        load_problem, save_problem)
from .stochastic import LinearValueObjective

logger = logging.getLogger("budgetopt")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GENERATION = 3
EXIT_SOLVER = 4
EXIT_PARTIAL = 5

DEFAULTS: dict[str, Any] = {
    "family": "small_easy",
    "seed": 0,
    "method": "manifold",
    "steps": 5000,
    "lr": 0.01,
    "gumbel_samples": 1,
    "tau0": 1.0,
    "tau_min": 0.01,
    "mode": None,
    "grad": "relaxed",
    "retraction_tol": 1e-8,
    "bracket": 50.0,
    "out": None,
    "jobs": 1,
    "instances": 3,
    "problem": None,
    "lam": None,
    "extraction": "greedy",
    "timing": True,
}
CONFIG_KEYS = set(DEFAULTS) | {f.name for f in fields(RcoConfig)}


class ConfigError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser, run_flags: bool = True) -> None:
    p.add_argument("config", nargs="?", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output file or directory")
    if not run_flags:
        return
    p.add_argument("--family", choices=sorted(FAMILIES))
    p.add_argument("--problem", help="problem JSON file (instead of --family/--seed)")
    p.add_argument("--method", choices=METHODS + ("all",))
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--gumbel-samples", type=int, dest="gumbel_samples")
    p.add_argument("--tau0", type=float)
    p.add_argument("--tau-min", type=float, dest="tau_min")
    p.add_argument("--mode", choices=("equality", "slack", "multi"))
    p.add_argument("--grad", choices=("relaxed", "ste"))
    p.add_argument("--retraction-tol", type=float, dest="retraction_tol")
    p.add_argument("--bracket", type=float, help="half-width of the initial shift bracket")
    p.add_argument("--extraction", choices=("greedy", "dp"))
    p.add_argument("--lam", type=float, help="penalty weight; skips held-out tuning in bench")
    p.add_argument("--jobs", type=int)
    p.add_argument("--instances", type=int)
    p.add_argument("--no-timing", dest="timing", action="store_const", const=False,
                   help="write wall_clock_s as 0 so summaries are byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="budgetopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    scen = sub.add_parser("scenario", help="scenario utilities")
    scen_sub = scen.add_subparsers(dest="scenario_command", required=True)
    gen = scen_sub.add_parser("gen", help="generate a problem JSON")
    gen.add_argument("config", nargs="?")
    gen.add_argument("--family", choices=sorted(FAMILIES))
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out")

    for name, text in (("solve", "run one method on one instance"),
                       ("bench", "run methods x seeds and write a summary CSV")):
        _add_common(sub.add_parser(name, help=text))

    multi = sub.add_parser("multi", help="multi-constraint run with per-constraint traces")
    _add_common(multi)

    oracle = sub.add_parser("oracle", help="DP optimum of a problem file")
    oracle.add_argument("config", nargs="?")
    oracle.add_argument("--problem")
    oracle.add_argument("--family", choices=sorted(FAMILIES))
    oracle.add_argument("--seed", type=int)
    oracle.add_argument("--out")
    return parser


def resolve(args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, the config file and explicit flags (in that order)."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        opts.update(data)
    for key, value in vars(args).items():
        if key in CONFIG_KEYS and value is not None:
            opts[key] = value
    if opts["family"] not in FAMILIES:
        raise ConfigError(f"unknown family {opts['family']!r}")
    if opts["problem"] and not Path(opts["problem"]).is_file():
        raise ConfigError(f"problem file {opts['problem']} does not exist")
    return opts


def rco_config(opts: dict[str, Any]) -> RcoConfig:
    names = {f.name for f in fields(RcoConfig)}
    kwargs = {k: v for k, v in opts.items() if k in names and v is not None}
    try:
        return RcoConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _out_dir(opts, default: str) -> Path:
    path = Path(opts["out"] or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(opts):
    if opts["problem"]:
        problem, constraints = load_problem(opts["problem"])
        name = problem.meta.get("family", Path(opts["problem"]).stem)
        return problem, constraints, name
    return generate(ScenarioSpec(opts["family"], opts["seed"])), None, opts["family"]


def cmd_scenario_gen(opts) -> int:
    problem = generate(ScenarioSpec(opts["family"], opts["seed"]))
    out = Path(opts["out"] or f"{opts['family']}_seed{opts['seed']}.json")
    save_problem(out, problem)
    checks = problem.meta["contracts"]
    print(f"{opts['family']} seed {opts['seed']}: N={problem.num_groups} K={problem.num_options} "
          f"budget={problem.budget:.6g} contracts={'ok' if checks['ok'] else 'FAILED'} -> {out}")
    for key, value in checks.items():
        if key != "ok":
            print(f"  {key}: {value}")
    return EXIT_OK


def _method_for_mode(opts) -> str:
    method = opts["method"]
    if opts["mode"] == "slack" and method == "manifold":
        return "manifold-slack"
    return method


def cmd_solve(opts) -> int:
    config = rco_config(opts)
    problem, _, name = _load(opts)
    method = _method_for_mode(opts)
    if method == "all":
        raise ConfigError("solve runs a single method; use bench for 'all'")
    if opts["mode"] == "multi":
        raise ConfigError("multi-constraint runs use the multi subcommand")
    lam = opts["lam"] if opts["lam"] is not None else 10.0
    _, trace = run_method(problem, method, config, lam=lam)
    out = _out_dir(opts, "run")
    (out / "trace.jsonl").write_text(trace.to_jsonl())
    row = SummaryRow.from_trace(name, trace, timing=opts["timing"])
    (out / "summary.csv").write_text(summary_csv([row]))
    print(summary_csv([row]), end="")
    return EXIT_OK


def cmd_bench(opts) -> int:
    config = rco_config(opts)
    if opts["problem"]:
        raise ConfigError("bench generates its own instances; use --family")
    family = opts["family"]
    methods = expand_methods(opts["method"])
    seeds = [opts["seed"] + i for i in range(opts["instances"])]
    lam = opts["lam"]
    tuning = None
    if lam is None and "lagrangian" in methods:
        lam, tuning = tuned_lambda(family, opts["seed"], config)
    jobs = [BenchJob(family, m, s, config, 10.0 if lam is None else lam)
            for m in methods for s in seeds]
    results = run_jobs(jobs, opts["jobs"])
    out = _out_dir(opts, f"bench_{family}")
    traces_dir = out / "traces"
    traces_dir.mkdir(exist_ok=True)
    rows = []
    for res in results:
        job = res.job
        if res.trace is None:
            rows.append(SummaryRow.failed(family, job.method, job.seed, res.error))
            continue
        (traces_dir / f"{family}_{job.method}_seed{job.seed}.jsonl").write_text(res.trace.to_jsonl())
        rows.append(SummaryRow.from_trace(family, res.trace, timing=opts["timing"]))
    text = summary_csv(rows)
    (out / "summary.csv").write_text(text)
    if tuning is not None:
        (out / "lambda_tuning.json").write_text(json.dumps(
            {"chosen": lam, "grid": {repr(k): {"final_gap_pct": g, "mean_abs_violation": v}
                                     for k, (g, v) in tuning.items()}}, indent=1) + "\n")
    print(text, end="")
    failed = sum(r.status != "ok" for r in rows)
    return EXIT_PARTIAL if failed else EXIT_OK


def cmd_multi(opts) -> int:
    config = replace(rco_config(opts), mode="multi")
    base, constraints = generate_multi(opts["seed"])
    objective = LinearValueObjective(base.values)
    lam = opts["lam"] if opts["lam"] is not None else 10.0
    out = _out_dir(opts, "multi")
    runs = [("manifold", lambda: run_rco_multi(base, constraints, objective, config))]
    for m in ("lagrangian", "augmented"):
        runs.append((m, lambda m=m: run_baseline(base, objective, m, config, lam=lam,
                                                 constraints=constraints)))
    lines = ["method,mean_max_abs_violation,max_abs_violation,final_value,feasible"]
    for method, fn in runs:
        choices, trace = fn()
        (out / f"multi_{method}.jsonl").write_text(trace.to_jsonl())
        (out / f"multi_{method}_violations.csv").write_text(violation_table_csv(trace))
        totals = (base.group_weights @ constraints.costs[:, choices].T)
        feasible = bool(np.all(totals <= constraints.budgets))
        lines.append(f"{method},{trace.mean_abs_violation()!r},{trace.max_abs_violation()!r},"
                     f"{assignment_value(choices, base.values)!r},{feasible}")
    text = "\n".join(lines) + "\n"
    (out / "multi_summary.csv").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_oracle(opts) -> int:
    problem, _, _ = _load(opts)
    if problem.values is None:
        raise ConfigError("problem has no values matrix")
    sol = solve_oracle(problem)
    report = {"value": sol.score, "cost": discrete_cost(sol.choices, problem),
              "budget": problem.budget, "assignment": sol.choices.tolist()}
    text = json.dumps(report, indent=1)
    if opts["out"]:
        Path(opts["out"]).write_text(text + "\n")
    print(f"value {sol.score!r} cost {report['cost']!r} budget {problem.budget!r}")
    return EXIT_OK


def _setup_logging() -> None:
    level = os.environ.get("RCO_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
        if args.command == "scenario":
            return cmd_scenario_gen(opts)
        handler = {"solve": cmd_solve, "bench": cmd_bench, "multi": cmd_multi,
                   "oracle": cmd_oracle}[args.command]
        return handler(opts)
    except (ConfigError, InvalidProblem, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GenerationFailed as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except (Infeasible, GridTooLarge, BudgetOptError, FloatingPointError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
