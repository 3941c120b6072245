"""Seeded Monte Carlo replication and aggregation.

Each replicate draws fresh data, a pilot, and rule estimates; all requested
rules share that data and pilot so efficiency comparisons are equal-budget
and use common random numbers.  Replicate seeds are seed XOR splitmix64(r),
which keeps runs reproducible regardless of worker count.
"""

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np

from . import pipeline
from .dgp import GENERATORS

_MASK64 = (1 << 64) - 1

ALL_ESTIMATORS = ("one_step", "exclude_pilot", "ivw", "ipw")


def splitmix64(x):
    """One step of the splitmix64 mixer; maps any 64-bit value to another."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def replicate_seed(seed, r):
    return (int(seed) ^ splitmix64(int(r))) & _MASK64


@dataclass(frozen=True)
class ScenarioSpec:
    dgp: str
    n: int
    q: int = 1
    varpi: float = 0.3
    reps: int = 500
    seed: int = 0
    rules: tuple = ("uniform", "sopt")
    estimators: tuple = ("one_step",)
    kappa_c: float | None = None
    priority: tuple | None = None
    threads: int = 1

    def __post_init__(self):
        if self.dgp not in GENERATORS:
            raise ValueError(f"unknown dgp {self.dgp!r}; choose from {sorted(GENERATORS)}")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not 0.0 < self.varpi <= 1.0:
            raise ValueError("varpi must lie in (0, 1]")
        for e in self.estimators:
            if e not in ALL_ESTIMATORS:
                raise ValueError(f"unknown estimator {e!r}; choose from {ALL_ESTIMATORS}")
        if "priority" in self.rules and self.priority is None:
            raise ValueError("the priority rule needs a priority vector")

    @property
    def kappa_constant(self):
        if self.kappa_c is not None:
            return self.kappa_c
        return GENERATORS[self.dgp][1](self.q)

    def expanded_rules(self, d):
        """Replace the bare "sopt" token by one entry per component."""
        out = []
        for kind in self.rules:
            if kind == "sopt" and d > 1:
                out.extend(f"sopt{j + 1}" for j in range(d))
            else:
                out.append(kind)
        return out


@dataclass
class AggregateTable:
    spec: ScenarioSpec
    theta0: np.ndarray
    rows: list = field(default_factory=list)
    failures: int = 0
    failure_messages: list = field(default_factory=list)
    maximin_gaps: list = field(default_factory=list)  # per-replicate M_G - M_C

    def row(self, rule, estimator, component):
        for r in self.rows:
            if (r["rule"], r["estimator"], r["component"]) == (rule, estimator, component):
                return r
        raise KeyError((rule, estimator, component))


def _needed_rule_kinds(rule_tokens):
    which = set()
    for kind in rule_tokens:
        if kind.startswith("sopt"):
            which.add("sopt")
        elif kind in ("sum", "copt", "gopt"):
            which.add(kind)
    if "copt" in which:
        which.add("sopt")
    return tuple(sorted(which))


def run_replicate(spec, r):
    """One full replicate; returns per-(rule, estimator) reports and metadata."""
    seed_r = replicate_seed(spec.seed, r)
    rng = np.random.Generator(np.random.PCG64(seed_r))
    gen = GENERATORS[spec.dgp][0]
    data = gen(spec.n, spec.q, rng)
    problem = data.problem

    kappa = pipeline.kappa_default(spec.varpi, spec.n, spec.kappa_constant)
    R1 = pipeline.draw_pilot(spec.n, kappa, rng)

    rule_tokens = spec.expanded_rules(problem.d)
    bundle = pipeline.estimate_rules(
        problem,
        data.V,
        data.U,
        R1,
        spec.varpi,
        kappa,
        which=_needed_rule_kinds(rule_tokens),
        priority_weights=spec.priority if "priority" in rule_tokens else None,
    )

    out = {"reports": {}, "theta0": data.theta0}
    if bundle.copt is not None and bundle.gopt is not None:
        out["maximin_gap"] = bundle.gopt.objective_value - bundle.copt.objective_value

    for idx, kind in enumerate(rule_tokens):
        rule = bundle.rule_for(kind)
        rng_rule = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed_r, spawn_key=(idx,)))
        )
        R2, rho_n = pipeline.draw_second_phase(rule, R1, data.V, rng_rule, kappa)
        U = data.U.copy()
        U[~(R1 | R2)] = np.nan
        ds = pipeline.TwoPhaseDataset(V=data.V, U=U, R1=R1, R2=R2, rho_n=rho_n)

        theta_ipw = pipeline.ipw_estimate(problem, ds, bundle.eta)
        reports = {}
        if "ipw" in spec.estimators:
            se = np.full(problem.d, np.nan)
            reports["ipw"] = pipeline.EstimateReport(
                theta=np.asarray(theta_ipw, dtype=float),
                se=se,
                ci_lo=se,
                ci_hi=se,
                kind="ipw",
                rule=kind,
                sampled_fraction=float(ds.observed.mean()),
            )
        if "one_step" in spec.estimators:
            reports["one_step"] = pipeline.one_step(
                problem, ds, theta_ipw, bundle.moment_models, bundle.eta, rule_name=kind
            )
        if "exclude_pilot" in spec.estimators or "ivw" in spec.estimators:
            ex = pipeline.one_step_excluding_pilot(
                problem, ds, rule, bundle.moment_models, bundle.eta, rule_name=kind
            )
            if "exclude_pilot" in spec.estimators:
                reports["exclude_pilot"] = ex
            if "ivw" in spec.estimators:
                pil = pipeline.pilot_estimate(problem, ds, bundle.eta, rule_name=kind)
                reports["ivw"] = pipeline.ivw_combine(pil, ex)
        out["reports"][kind] = reports
    return out


def _run_replicate_guarded(args):
    spec, r = args
    try:
        return r, run_replicate(spec, r), None
    except Exception as exc:  # noqa: BLE001 - failed replicates are reported, not fatal
        return r, None, f"replicate {r}: {type(exc).__name__}: {exc}"


def run_scenario(spec):
    """Run every replicate and aggregate bias, SE, RE and coverage."""
    jobs = [(spec, r) for r in range(spec.reps)]
    if spec.threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=spec.threads) as pool:
            results = sorted(pool.map(_run_replicate_guarded, jobs), key=lambda t: t[0])
    else:
        results = [_run_replicate_guarded(j) for j in jobs]

    ok = [res for _, res, err in results if err is None]
    errors = [err for _, _, err in results if err is not None]
    if not ok:
        raise RuntimeError("every replicate failed; first error: " + errors[0])

    theta0 = ok[0]["theta0"]
    table = AggregateTable(spec=spec, theta0=theta0, failures=len(errors), failure_messages=errors)
    table.maximin_gaps = [res["maximin_gap"] for res in ok if "maximin_gap" in res]

    rule_tokens = list(ok[0]["reports"].keys())
    d = len(theta0)
    variances = {}
    for kind in rule_tokens:
        for est in spec.estimators:
            reps = [res["reports"][kind][est] for res in ok]
            thetas = np.array([r.theta for r in reps])
            fracs = np.array([r.sampled_fraction for r in reps])
            if est == "ipw":
                hits = np.full((len(reps), d), np.nan)
            else:
                hits = np.array([r.covers(theta0) for r in reps], dtype=float)
            var = thetas.var(axis=0, ddof=1) if len(reps) > 1 else np.full(d, np.nan)
            variances[(kind, est)] = var
            for j in range(d):
                table.rows.append(
                    {
                        "rule": kind,
                        "estimator": est,
                        "component": j + 1,
                        "bias": float(thetas[:, j].mean() - theta0[j]),
                        "se": float(np.sqrt(var[j])) if len(reps) > 1 else np.nan,
                        "re": np.nan,
                        "coverage": float(np.nanmean(hits[:, j])) if est != "ipw" else np.nan,
                        "sampled_fraction": float(fracs.mean()),
                    }
                )

    has_uniform = "uniform" in rule_tokens
    for row in table.rows:
        if not has_uniform or np.isnan(row["se"]):
            continue
        var_u = variances[("uniform", row["estimator"])][row["component"] - 1]
        var_r = variances[(row["rule"], row["estimator"])][row["component"] - 1]
        row["re"] = float(var_u / var_r)
    return table
