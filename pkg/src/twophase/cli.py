"""Command-line interface.

Subcommands:
  simulate             run a scenario config through the Monte Carlo harness
  design               calibrate sampling rules from a pilot-marked CSV
  estimate             estimate parameters from a sampled CSV plus a rule file
  demo-classification  analytic three-parameter demo on the binary-test law

Exit codes: 0 on success with all hard identities holding, 1 when a
computation fails or an identity is violated (budget residual, failed
replicates), 2 on configuration or input errors.
"""

import argparse
import os
import sys

import numpy as np

from . import demo, moments, pipeline, problems, serialize
from .simulate import ALL_ESTIMATORS, run_scenario


def _tokens(s):
    return tuple(t for t in s.replace(",", " ").split() if t)


def _floats(s):
    return tuple(float(t) for t in s.replace(",", " ").split() if t)


def _fail(code, exc):
    print(f"error: {exc}", file=sys.stderr)
    return code


def _expand_sopt(tokens, d):
    out = []
    for t in tokens:
        if t == "sopt" and d > 1:
            out.extend(f"sopt{j + 1}" for j in range(d))
        else:
            out.append(t)
    return out


def _base_kinds(tokens):
    kinds = set()
    for t in tokens:
        if t.startswith("sopt"):
            kinds.add("sopt")
        elif t in ("sum", "copt", "gopt"):
            kinds.add(t)
    if "copt" in kinds:
        kinds.add("sopt")
    return tuple(sorted(kinds))


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    try:
        overrides = {
            "seed": args.seed,
            "varpi": args.varpi,
            "kappa_c": args.kappa_c,
            "threads": args.threads,
            "rules": _tokens(args.rules) if args.rules else None,
            "priority": _floats(args.priority) if args.priority else None,
        }
        spec = serialize.load_scenario(args.scenario, overrides=overrides)
    except Exception as exc:  # noqa: BLE001
        return _fail(2, exc)

    config = {
        "command": "simulate",
        "scenario": args.scenario,
        "dgp": spec.dgp,
        "n": spec.n,
        "q": spec.q,
        "varpi": spec.varpi,
        "reps": spec.reps,
        "seed": spec.seed,
        "rules": " ".join(spec.rules),
        "estimators": " ".join(spec.estimators),
        "kappa_c": spec.kappa_constant,
        "priority": " ".join(map(repr, spec.priority)) if spec.priority else "",
        "threads": spec.threads,
    }
    try:
        table = run_scenario(spec)
        serialize.write_aggregate(args.out, table, config)
    except Exception as exc:  # noqa: BLE001
        return _fail(1, exc)

    print(f"wrote {args.out} ({len(table.rows)} rows)")
    if table.failures:
        for msg in table.failure_messages[:5]:
            print(f"error: {msg}", file=sys.stderr)
        print(f"error: {table.failures} failed replicate(s)", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# design
# ---------------------------------------------------------------------------

def cmd_design(args):
    try:
        schema = serialize.load_schema(args.schema)
        problem, V, U, R1, _, _ = serialize.load_dataset(args.data, schema)
        if R1 is None:
            raise ValueError("design needs a pilot indicator column (schema key r1)")
        if not R1.any():
            raise ValueError("no pilot rows marked in the data")
        if not np.all(np.isfinite(np.atleast_2d(U)[R1])):
            raise ValueError("pilot rows must have fully observed second-phase columns")
        kappa = float(R1.mean())
        if kappa >= args.varpi:
            raise ValueError(
                f"pilot fraction {kappa:.4f} already exceeds the budget {args.varpi}"
            )
        tokens = _tokens(args.rules)
        priority = _floats(args.priority) if args.priority else None
        if "priority" in tokens and priority is None:
            raise ValueError("the priority rule needs --priority a1,a2,...")
    except Exception as exc:  # noqa: BLE001
        return _fail(2, exc)

    try:
        bundle = pipeline.estimate_rules(
            problem, V, U, R1, args.varpi, kappa,
            which=_base_kinds(tokens), priority_weights=priority,
        )
        tokens = _expand_sopt(tokens, problem.d)
        os.makedirs(args.out, exist_ok=True)

        config = {
            "command": "design",
            "data": args.data,
            "schema": args.schema,
            "problem": schema["problem"],
            "varpi": args.varpi,
            "kappa": kappa,
            "rules": " ".join(tokens),
        }
        non_pilot = ~R1
        worst = 0.0
        cols = {}
        for tok in tokens:
            rule = bundle.rule_for(tok)
            serialize.save_rule(
                os.path.join(args.out, f"rule_{tok}.ini"), rule,
                varpi=args.varpi, kappa=kappa,
            )
            cols[tok] = np.asarray(rule(V), dtype=float)
            res = pipeline.budget_residual(rule, V, non_pilot, args.varpi, kappa)
            worst = max(worst, res)
            print(f"budget residual {tok} = {res:.3e}")

        prob_path = os.path.join(args.out, "probabilities.csv")
        header = serialize.echo_header(config) + "row," + ",".join(tokens)
        lines = [header]
        for i in range(V.shape[0]):
            lines.append(
                ",".join([str(i)] + [repr(float(cols[t][i])) for t in tokens])
            )
        with open(prob_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"wrote {args.out}/rule_*.ini and {prob_path}")
    except Exception as exc:  # noqa: BLE001
        return _fail(1, exc)

    if worst > pipeline.BUDGET_TOL:
        print(f"error: budget residual {worst:.3e} exceeds {pipeline.BUDGET_TOL}",
              file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------

def cmd_estimate(args):
    try:
        schema = serialize.load_schema(args.schema)
        problem, V, U, R1, R2, rho = serialize.load_dataset(args.data, schema)
        if R1 is None or R2 is None:
            raise ValueError("estimation needs r1 and r2 columns in the schema")
        rule, meta = serialize.load_rule(args.rule)
        estimators = _tokens(args.estimators)
        bad = [e for e in estimators if e not in ALL_ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimator(s) {bad}; choose from {ALL_ESTIMATORS}")
        if not (R1 | R2).any():
            raise ValueError("no observed rows")
    except Exception as exc:  # noqa: BLE001
        return _fail(2, exc)

    try:
        kappa = meta.get("kappa", float(R1.mean()))
        raw = np.asarray(rule(V), dtype=float)
        rho_n = rho if rho is not None else kappa + (1.0 - kappa) * raw
        data = pipeline.TwoPhaseDataset(V=V, U=U, R1=R1, R2=R2, rho_n=rho_n)

        eta = problems.fit_nuisance(problem, V, U, R1)
        theta_pilot = problems.solve_theta_pilot(problem, V, U, R1, eta)
        psi_pilot = problem.psi(V[R1], np.atleast_2d(U)[R1], theta_pilot, eta)
        models = moments.fit_moments(psi_pilot, V[R1])

        reports = []
        theta_ipw = pipeline.ipw_estimate(problem, data, eta)
        if "ipw" in estimators:
            nan = np.full(problem.d, np.nan)
            reports.append(pipeline.EstimateReport(
                theta=np.asarray(theta_ipw, dtype=float), se=nan, ci_lo=nan,
                ci_hi=nan, kind="ipw", rule=args.rule,
                sampled_fraction=float(data.observed.mean()),
            ))
        if "one_step" in estimators:
            reports.append(pipeline.one_step(
                problem, data, theta_ipw, models, eta, rule_name=args.rule
            ))
        if "exclude_pilot" in estimators or "ivw" in estimators:
            ex = pipeline.one_step_excluding_pilot(
                problem, data, rule, models, eta, rule_name=args.rule
            )
            if "exclude_pilot" in estimators:
                reports.append(ex)
            if "ivw" in estimators:
                pil = pipeline.pilot_estimate(problem, data, eta, rule_name=args.rule)
                reports.append(pipeline.ivw_combine(pil, ex))

        config = {
            "command": "estimate",
            "data": args.data,
            "schema": args.schema,
            "rule": args.rule,
            "problem": schema["problem"],
            "kappa": kappa,
            "estimators": " ".join(estimators),
        }
        serialize.write_estimates(args.out, reports, config)
        print(f"wrote {args.out} ({len(reports)} estimator(s))")
    except Exception as exc:  # noqa: BLE001
        return _fail(1, exc)
    return 0


# ---------------------------------------------------------------------------
# demo
# ---------------------------------------------------------------------------

def cmd_demo(args):
    try:
        result = demo.run_demo(varpi=args.varpi)
    except AssertionError as exc:
        return _fail(1, exc)
    except Exception as exc:  # noqa: BLE001
        return _fail(2, exc)
    print(result.format_table())
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="twophase",
        description="Optimal and maximin sampling designs for two-phase studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a Monte Carlo scenario config")
    p.add_argument("scenario", help="scenario INI file")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--seed", type=int, default=None, help="override scenario seed")
    p.add_argument("--varpi", type=float, default=None, help="override budget")
    p.add_argument("--kappa-c", dest="kappa_c", type=float, default=None,
                   help="override pilot-fraction constant c")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default from scenario, 1)")
    p.add_argument("--rules", default=None,
                   help="override rule list, e.g. 'uniform,sopt,gopt'")
    p.add_argument("--priority", default=None, help="priority weights a1,a2,...")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("design", help="calibrate rules from a pilot-marked CSV")
    p.add_argument("data", help="CSV with phase-1 columns and pilot rows")
    p.add_argument("--schema", required=True, help="schema sidecar INI")
    p.add_argument("--varpi", type=float, default=0.3, help="sampling budget (default 0.3)")
    p.add_argument("--rules", default="sopt,sum,copt,gopt",
                   help="rules to calibrate (default sopt,sum,copt,gopt)")
    p.add_argument("--priority", default=None, help="priority weights a1,a2,...")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("estimate", help="estimate parameters from sampled data")
    p.add_argument("data", help="CSV with R1/R2 indicators and sampled U")
    p.add_argument("--schema", required=True, help="schema sidecar INI")
    p.add_argument("--rule", required=True, help="serialized rule file")
    p.add_argument("--estimators", default="one_step",
                   help=f"subset of {ALL_ESTIMATORS} (default one_step)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("demo-classification",
                       help="analytic demo on the binary-test law")
    p.add_argument("--varpi", type=float, default=0.3, help="sampling budget (default 0.3)")
    p.set_defaults(func=cmd_demo)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
