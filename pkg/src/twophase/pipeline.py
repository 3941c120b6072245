"""End-to-end two-phase execution.

The flow: draw a Bernoulli(kappa) pilot, observe its expensive block, fit
nuisances and a first-pass theta on the pilot, fit the conditional moment
models of each influence component, calibrate the sampling rules on the
remaining budget, draw the second phase, and estimate theta by inverse
probability weighting plus a one-step correction.  Standard errors come from
the empirical variance of the plug-in observed-data influence values.
"""

from dataclasses import dataclass

import numpy as np

from . import design, moments, problems, rules

Z975 = 1.959964
BUDGET_TOL = 1e-8


# ---------------------------------------------------------------------------
# datasets and reports
# ---------------------------------------------------------------------------

@dataclass
class TwoPhaseDataset:
    """First-phase rows V for everyone, expensive block U where observed.

    R1 marks pilot rows, R2 second-phase rows (always 0 on pilot rows), and
    rho_n holds each row's approximate inclusion probability
    kappa + (1 - kappa) * rule(V).
    """

    V: np.ndarray
    U: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    rho_n: np.ndarray | None = None

    def __post_init__(self):
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        self.U = np.atleast_2d(np.asarray(self.U, dtype=float).T).T
        self.R1 = np.asarray(self.R1, dtype=bool)
        self.R2 = np.asarray(self.R2, dtype=bool)
        if np.any(self.R1 & self.R2):
            raise ValueError("R1 and R2 must be disjoint")
        if self.rho_n is not None:
            self.rho_n = np.asarray(self.rho_n, dtype=float)
            if np.any(self.rho_n <= 0):
                raise ValueError("inclusion probabilities must be strictly positive")
        obs = self.observed
        if np.any(~np.isfinite(self.U[obs])):
            raise ValueError("observed rows must have a complete expensive block")

    @property
    def n(self):
        return self.V.shape[0]

    @property
    def observed(self):
        return self.R1 | self.R2


@dataclass(frozen=True)
class EstimateReport:
    theta: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    kind: str  # one_step | exclude_pilot | ivw | ipw | pilot
    rule: str
    sampled_fraction: float

    @classmethod
    def build(cls, theta, se, kind, rule, sampled_fraction):
        theta = np.asarray(theta, dtype=float)
        se = np.asarray(se, dtype=float)
        return cls(
            theta=theta,
            se=se,
            ci_lo=theta - Z975 * se,
            ci_hi=theta + Z975 * se,
            kind=kind,
            rule=rule,
            sampled_fraction=float(sampled_fraction),
        )

    def covers(self, truth):
        truth = np.asarray(truth, dtype=float)
        return (self.ci_lo <= truth) & (truth <= self.ci_hi)


# ---------------------------------------------------------------------------
# pilot
# ---------------------------------------------------------------------------

def kappa_default(varpi, n, c):
    """Default pilot fraction varpi / (1 + log(varpi * n / c))."""
    arg = varpi * n / c
    if arg <= 1.0:
        raise ValueError(
            f"varpi*n/c must exceed 1 for a valid pilot fraction, got {arg:.4g}"
        )
    return varpi / (1.0 + np.log(arg))


def draw_pilot(n, kappa, rng):
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"pilot fraction must lie in (0, 1), got {kappa}")
    return rng.random(n) < kappa


# ---------------------------------------------------------------------------
# rule estimation
# ---------------------------------------------------------------------------

@dataclass
class RuleBundle:
    """Everything estimated from the pilot: nuisances, moments, and rules."""

    problem: object
    varpi: float
    kappa: float
    theta_pilot: np.ndarray
    eta: object
    moment_models: list
    bound: rules.EmpiricalBound
    rho0: rules.SamplingRule
    component_rules: list | None = None
    sum_rule: rules.SamplingRule | None = None
    copt: design.MaximinSolution | None = None
    gopt: design.MaximinSolution | None = None
    priority: design.MaximinSolution | None = None

    def rule_for(self, kind):
        if kind == "uniform":
            return self.rho0
        if kind.startswith("sopt"):
            idx = int(kind[4:] or 1) - 1
            return self.component_rules[idx]
        if kind == "sum":
            return self.sum_rule
        if kind == "copt":
            return self.copt.rule
        if kind == "gopt":
            return self.gopt.rule
        if kind == "priority":
            return self.priority.rule
        raise KeyError(f"unknown rule kind {kind!r}")


def budget_residual(rule, V, non_pilot, varpi, kappa):
    """Absolute deviation of the masked empirical budget from varpi - kappa."""
    vals = rule(V)
    return abs(vals[non_pilot].sum() / V.shape[0] - (varpi - kappa))


def estimate_rules(
    problem,
    V,
    U,
    R1,
    varpi,
    kappa,
    which=("sopt", "sum", "copt", "gopt"),
    priority_weights=None,
):
    """Fit pilot quantities and calibrate the requested sampling rules.

    `which` selects among "sopt" (one rule per component), "sum", "copt",
    "gopt"; a priority rule is added whenever priority_weights is given.
    The benchmark rho0 is the budget-matched constant rule, so every
    calibrated rule satisfies the empirical budget identity exactly.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    R1 = np.asarray(R1, dtype=bool)
    n = V.shape[0]
    m = int(R1.sum())
    if m == 0:
        raise ValueError("empty pilot sample")
    if not 0.0 <= kappa < varpi <= 1.0:
        raise ValueError(f"need 0 <= kappa < varpi <= 1, got kappa={kappa}, varpi={varpi}")
    non_pilot = ~R1
    if not non_pilot.any():
        raise ValueError("every row is in the pilot; nothing left to sample")

    eta = problems.fit_nuisance(problem, V, U, R1)
    theta_pilot = problems.solve_theta_pilot(problem, V, U, R1, eta)
    psi_pilot = problem.psi(V[R1], np.atleast_2d(U)[R1], theta_pilot, eta)
    models = moments.fit_moments(psi_pilot, V[R1])

    c0 = (varpi - kappa) * n / non_pilot.sum()
    rho0 = rules.Uniform(min(c0, 1.0))
    sigma_fns = [mdl.predict_sigma for mdl in models]
    pi_fns = [mdl.predict_pi for mdl in models]
    bound = rules.EmpiricalBound.from_rules(sigma_fns, pi_fns, rho0, V)

    bundle = RuleBundle(
        problem=problem,
        varpi=varpi,
        kappa=kappa,
        theta_pilot=theta_pilot,
        eta=eta,
        moment_models=models,
        bound=bound,
        rho0=rho0,
    )

    need_components = (
        "sopt" in which or "copt" in which or any(k.startswith("sopt") for k in which)
    )
    if need_components:
        bundle.component_rules = [
            rules.scalar_optimal_rule(f, V, varpi, kappa=kappa, mask=non_pilot)
            for f in sigma_fns
        ]
    if "sum" in which:
        bundle.sum_rule = rules.sum_rule(sigma_fns, V, varpi, kappa=kappa, mask=non_pilot)
    if "copt" in which:
        bundle.copt = design.solve_constrained_maximin(
            bound, bundle.component_rules, rho0
        )
    if "gopt" in which:
        bundle.gopt = design.solve_global_maximin(
            bound, sigma_fns, varpi, kappa=kappa, mask=non_pilot
        )
    if priority_weights is not None:
        bundle.priority = design.solve_priority_maximin(
            bound, sigma_fns, priority_weights, varpi, kappa=kappa, mask=non_pilot
        )
    return bundle


# ---------------------------------------------------------------------------
# second phase and estimation
# ---------------------------------------------------------------------------

def draw_second_phase(rule, R1, V, rng, kappa):
    """Bernoulli second-phase indicators for non-pilot rows, plus rho_n."""
    V = np.atleast_2d(V)
    p = np.asarray(rule(V), dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("rule produced probabilities outside [0, 1]")
    R1 = np.asarray(R1, dtype=bool)
    R2 = (rng.random(V.shape[0]) < p) & ~R1
    rho_n = kappa + (1.0 - kappa) * p
    return R2, rho_n


def ipw_estimate(problem, data, eta):
    """Solve the estimating equation weighted by R / rho_n."""
    if data.rho_n is None:
        raise ValueError("dataset lacks inclusion probabilities")
    weights = np.where(data.observed, 1.0 / data.rho_n, 0.0)
    return problem.solve_weighted(data.V, data.U, weights, eta)


def one_step(problem, data, theta_ipw, models, eta, rule_name="rule"):
    """IPW estimate plus the averaged augmentation, with plug-in SEs."""
    pi_hat = np.column_stack([m.predict_pi(data.V) for m in models])
    r = data.observed
    corr = ((r / data.rho_n - 1.0)[:, None] * pi_hat).mean(axis=0)
    theta = np.asarray(theta_ipw, dtype=float) - corr

    psi = np.zeros((data.n, problem.d))
    psi[r] = problem.psi(data.V[r], np.atleast_2d(data.U)[r], theta, eta)
    eif = problems.two_phase_eif(psi, pi_hat, data.rho_n, r)
    se = np.sqrt(eif.var(axis=0, ddof=1) / data.n)
    return EstimateReport.build(theta, se, "one_step", rule_name, r.mean())


def one_step_excluding_pilot(problem, data, rule, models, eta, rule_name="rule"):
    """Same construction restricted to non-pilot rows, using the raw rule
    probabilities as inclusion probabilities."""
    keep = ~data.R1
    n_ex = int(keep.sum())
    if n_ex == 0:
        raise ValueError("no non-pilot rows to estimate from")
    V = data.V[keep]
    U = np.atleast_2d(data.U)[keep]
    r = data.R2[keep]
    rho = np.asarray(rule(V), dtype=float)
    if np.any(rho <= 0):
        raise ValueError("rule vanishes on a non-pilot row")

    weights = np.zeros(data.n)
    weights[keep] = np.where(r, 1.0 / rho, 0.0)
    theta_ipw = problem.solve_weighted(data.V, data.U, weights, eta)

    pi_hat = np.column_stack([m.predict_pi(V) for m in models])
    corr = ((r / rho - 1.0)[:, None] * pi_hat).mean(axis=0)
    theta = theta_ipw - corr

    psi = np.zeros((n_ex, problem.d))
    psi[r] = problem.psi(V[r], U[r], theta, eta)
    eif = problems.two_phase_eif(psi, pi_hat, rho, r)
    se = np.sqrt(eif.var(axis=0, ddof=1) / n_ex)
    return EstimateReport.build(theta, se, "exclude_pilot", rule_name, r.mean())


def pilot_estimate(problem, data, eta, rule_name="rule"):
    """Estimate from the pilot rows alone, with full-data influence SEs."""
    m = int(data.R1.sum())
    theta = problem.solve_weighted(data.V, data.U, data.R1.astype(float), eta)
    psi = problem.psi(data.V[data.R1], np.atleast_2d(data.U)[data.R1], theta, eta)
    se = np.sqrt(psi.var(axis=0, ddof=1) / m)
    return EstimateReport.build(theta, se, "pilot", rule_name, m / data.n)


def ivw_combine(report_a, report_b):
    """Inverse-variance-weighted combination, component-wise.

    Intended for a pilot-only report (a) and an excluding-pilot report (b);
    the combined sampled fraction composes the two.
    """
    if np.any(report_a.se <= 0) or np.any(report_b.se <= 0):
        raise ValueError("both reports need strictly positive standard errors")
    wa = 1.0 / report_a.se**2
    wb = 1.0 / report_b.se**2
    theta = (wa * report_a.theta + wb * report_b.theta) / (wa + wb)
    se = 1.0 / np.sqrt(wa + wb)
    frac = report_a.sampled_fraction + (1.0 - report_a.sampled_fraction) * report_b.sampled_fraction
    return EstimateReport.build(theta, se, "ivw", report_b.rule, frac)
