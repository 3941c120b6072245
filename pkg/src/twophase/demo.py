"""Analytic demo: sensitivity/specificity estimation from a binary test.

The parameter is (prevalence, sensitivity, specificity) of a disease given a
binary test result X.  Phase 1 observes X only; phase 2 confirms the true
status Y.  Because the three components want opposite subsamples (sensitivity
needs test-positives, specificity test-negatives), single-component optimal
rules can be much worse than uniform on the other components.  Everything
here is exact enumeration over the four support points, so the efficiency
bounds and maximin rules come out in closed form up to root finding.
"""

from dataclasses import dataclass

import numpy as np

from .design import solve_constrained_maximin, solve_global_maximin
from .problems import psi_classification
from .rules import EmpiricalBound, Truncated, Uniform, solve_threshold

RULE_ORDER = ("uniform", "sopt1", "sopt2", "sopt3", "sum", "copt", "gopt")

LABELS = {
    "uniform": "uniform",
    "sopt1": "prevalence-optimal",
    "sopt2": "sensitivity-optimal",
    "sopt3": "specificity-optimal",
    "sum": "sum rule",
    "copt": "constrained maximin",
    "gopt": "global maximin",
}


def _step_fn(val_x1, val_x0):
    def fn(V):
        x = np.atleast_2d(V)[:, 0]
        return np.where(x > 0.5, val_x1, val_x0)

    return fn


def joint_law(theta):
    """Exact law of (X, Y): P(Y=1)=theta1, P(X=1|Y=1)=theta2, P(X=0|Y=0)=theta3."""
    t1, t2, t3 = theta
    if not (0 < t1 < 1 and 0 < t2 < 1 and 0 < t3 < 1):
        raise ValueError("all three probabilities must lie strictly inside (0, 1)")
    # rows: x in (1, 0); columns: y in (1, 0)
    joint = np.array(
        [[t1 * t2, (1 - t1) * (1 - t3)], [t1 * (1 - t2), (1 - t1) * t3]]
    )
    return joint


def conditional_tables(theta):
    """Per-atom conditional mean and variance of each EIF component given X.

    Returns (V_atoms, weights, sig2, pi) with atoms ordered x=1 then x=0.
    """
    joint = joint_law(theta)
    p_x = joint.sum(axis=1)
    x_atoms = np.array([1.0, 0.0])
    y_vals = np.array([1.0, 0.0])

    sig2 = np.empty((2, 3))
    pi = np.empty((2, 3))
    for i, x in enumerate(x_atoms):
        p_y_given_x = joint[i] / p_x[i]
        psi = np.vstack(
            [psi_classification(np.array([x]), np.array([y]), np.asarray(theta))
             for y in y_vals]
        )  # (2, 3): psi at y=1, y=0
        pi[i] = p_y_given_x @ psi
        sig2[i] = p_y_given_x @ psi**2 - pi[i] ** 2
    return x_atoms[:, None], p_x, sig2, pi


@dataclass(frozen=True)
class DemoResult:
    theta: tuple
    varpi: float
    weights: np.ndarray
    bounds: dict  # rule kind -> (3,) efficiency bound vector
    rho: dict  # rule kind -> (2,) inclusion probabilities at x=1, x=0
    copt_improvement: np.ndarray
    gopt_improvement: np.ndarray

    def format_table(self):
        lines = [
            f"theta = (prevalence, sensitivity, specificity) = {self.theta}",
            f"budget = {self.varpi}",
            f"P(X=1) = {self.weights[0]:.4f}",
            "",
            f"{'rule':<22}{'rho(x=1)':>10}{'rho(x=0)':>10}"
            f"{'bound 1':>10}{'bound 2':>10}{'bound 3':>10}",
        ]
        for kind in RULE_ORDER:
            b = self.bounds[kind]
            r = self.rho[kind]
            lines.append(
                f"{LABELS[kind]:<22}{r[0]:>10.4f}{r[1]:>10.4f}"
                f"{b[0]:>10.4f}{b[1]:>10.4f}{b[2]:>10.4f}"
            )
        lines.append("")
        lines.append(
            "component-wise improvement over uniform:"
            f" constrained maximin min = {self.copt_improvement.min():.6f},"
            f" global maximin min = {self.gopt_improvement.min():.6f}"
        )
        return "\n".join(lines)


def run_demo(varpi=0.3, theta=(0.2, 0.8, 0.6)):
    """Efficiency bounds for every catalog rule on the exact two-atom law."""
    if not 0.0 < varpi <= 1.0:
        raise ValueError("budget must lie in (0, 1]")
    V_atoms, weights, sig2, pi = conditional_tables(theta)
    sigma = np.sqrt(sig2)
    sigma_fns = [_step_fn(sigma[0, j], sigma[1, j]) for j in range(3)]

    rho0 = Uniform(varpi)
    bound = EmpiricalBound.from_tables(
        V_atoms, sig2, pi, rho0(V_atoms), weights=weights
    )

    component_rules = []
    for j in range(3):
        tau = solve_threshold(sigma[:, j], varpi, weights=weights)
        component_rules.append(Truncated(sigma_fns[j], tau))
    lam_sum = np.sqrt(sig2.sum(axis=1))
    sum_tau = solve_threshold(lam_sum, varpi, weights=weights)
    rule_sum = Truncated(_step_fn(lam_sum[0], lam_sum[1]), sum_tau)

    copt = solve_constrained_maximin(bound, component_rules, rho0)
    gopt = solve_global_maximin(bound, sigma_fns, varpi)

    rules = {
        "uniform": rho0,
        "sopt1": component_rules[0],
        "sopt2": component_rules[1],
        "sopt3": component_rules[2],
        "sum": rule_sum,
        "copt": copt.rule,
        "gopt": gopt.rule,
    }
    bounds = {k: bound.bound_under(r) for k, r in rules.items()}
    rho = {k: np.asarray(r(V_atoms), dtype=float) for k, r in rules.items()}

    for name, sol in (("constrained", copt), ("global", gopt)):
        if sol.per_component_improvement.min() < -1e-8:
            raise AssertionError(
                f"{name} maximin rule fails to dominate uniform: "
                f"improvements {sol.per_component_improvement}"
            )

    return DemoResult(
        theta=tuple(theta),
        varpi=float(varpi),
        weights=weights,
        bounds=bounds,
        rho=rho,
        copt_improvement=copt.per_component_improvement,
        gopt_improvement=gopt.per_component_improvement,
    )
