"""Frozen reference values and independent slow-path solvers for the tests.

The pinned constants were computed once by standalone enumeration scripts and
are asserted against the library; the helpers recompute the same quantities by
routes deliberately different from the library's (closed-form piecewise
threshold instead of bisection, exhaustive feasible grids and SLSQP instead of
coordinate refinement).  Nothing here imports from twophase.
"""

import numpy as np
from scipy import optimize


def solve_tau_exact(sigma, prob, target):
    """Exact threshold for a discrete law: E[min(sigma/tau, 1)] = target.

    Sorts the atoms by sigma descending and solves the linear equation on each
    saturation branch; returns 0.0 when the budget saturates (target >= total
    mass).
    """
    sigma = np.asarray(sigma, dtype=float)
    prob = np.asarray(prob, dtype=float)
    if target >= prob.sum():
        return 0.0
    order = np.argsort(sigma)[::-1]
    ss, p = sigma[order], prob[order]
    for k in range(len(ss) + 1):
        mass_hi = p[:k].sum()  # atoms pinned at rho = 1
        if target - mass_hi <= 0:
            continue
        tau = (p[k:] * ss[k:]).sum() / (target - mass_hi)
        lo = ss[k] if k < len(ss) else 0.0
        hi = ss[k - 1] if k > 0 else np.inf
        if lo <= tau <= hi:
            return float(tau)
    raise RuntimeError("no saturation branch matched; malformed law")


def scalar_bound(sigma, prob, rho):
    """E[sigma^2 / rho] on a discrete law."""
    return float((np.asarray(prob) * np.asarray(sigma) ** 2 / np.asarray(rho)).sum())


def grid_min_scalar(sigma, prob, varpi, step):
    """Exhaustive grid minimum of E[sigma^2/rho] subject to E[rho] <= varpi.

    Coordinates range over {step, 2*step, ..., 1}.  The objective decreases in
    every rho_i, so the grid optimum takes the largest feasible value in the
    last coordinate; the remaining coordinates are enumerated outright (the
    last two vectorized).
    """
    sigma = np.asarray(sigma, dtype=float)
    prob = np.asarray(prob, dtype=float)
    sig2 = sigma**2
    s = len(prob)
    m = int(round(1.0 / step))
    levels = np.arange(1, m + 1) * step

    if s == 1:
        k = min(int(np.floor(varpi / (prob[0] * step) + 1e-12)), m)
        if k < 1:
            raise ValueError("grid infeasible for the budget")
        return prob[0] * sig2[0] / (k * step)

    tail_min = step * np.cumsum(prob[::-1])[::-1]  # cheapest spend from atom i on
    best = np.inf

    def last_two(spent, acc, i):
        nonlocal best
        # atom i enumerated as a vector, atom i+1 takes its max feasible level
        feas = spent + prob[i] * levels + tail_min[i + 1] <= varpi + 1e-12
        if not feas.any():
            return
        r_i = levels[feas]
        rem = varpi - spent - prob[i] * r_i
        k = np.minimum(np.floor(rem / (prob[i + 1] * step) + 1e-12), m)
        ok = k >= 1
        if not ok.any():
            return
        r_last = k[ok] * step
        vals = acc + prob[i] * sig2[i] / r_i[ok] + prob[i + 1] * sig2[i + 1] / r_last
        v = vals.min()
        if v < best:
            best = v

    def rec(i, spent, acc):
        if i == s - 2:
            last_two(spent, acc, i)
            return
        for r in levels:
            ns = spent + prob[i] * r
            if ns + tail_min[i + 1] > varpi + 1e-12:
                break
            rec(i + 1, ns, acc + prob[i] * sig2[i] / r)

    rec(0, 0.0, 0.0)
    return float(best)


def slsqp_min_scalar(sigma, prob, varpi):
    """Continuous optimum of the same problem via SLSQP (smooth convex)."""
    sigma = np.asarray(sigma, dtype=float)
    prob = np.asarray(prob, dtype=float)
    sig2 = sigma**2
    s = len(prob)

    # the problem is strictly convex on a compact set, so any converged start
    # reaches the unique optimum; SLSQP can stall from a budget-tight start
    best = np.inf
    for c in (0.5, 0.9, 0.25, 0.75):
        res = optimize.minimize(
            lambda r: (prob * sig2 / r).sum(),
            np.full(s, c * min(varpi, 1.0)),
            jac=lambda r: -prob * sig2 / r**2,
            bounds=[(1e-9, 1.0)] * s,
            constraints=[{
                "type": "ineq",
                "fun": lambda r: varpi - prob @ r,
                "jac": lambda r: -prob,
            }],
            method="SLSQP",
            options={"ftol": 1e-14, "maxiter": 500},
        )
        if res.success:
            best = min(best, float(res.fun))
    if not np.isfinite(best):
        raise RuntimeError("SLSQP failed from every starting point")
    return best


def random_discrete_law(rng, max_support=6, d=1):
    """A random (prob, sigma-table, var_pi) triple with well-separated atoms."""
    s = int(rng.integers(2, max_support + 1))
    prob = rng.uniform(0.05, 1.0, s)
    prob /= prob.sum()
    sigma = rng.uniform(0.1, 3.0, (s, d))
    var_pi = rng.uniform(0.0, 0.5, d)
    return prob, sigma, var_pi


# ---------------------------------------------------------------------------
# frozen 3-point, d = 2 law (non-degenerate maximin optimum)
# ---------------------------------------------------------------------------

SMALL_LAW = {
    "prob": np.array([0.5, 0.3, 0.2]),
    "sigma": np.array([[0.2, 2.0], [1.5, 0.3], [0.6, 0.7]]),
    "var_pi": np.array([0.30, 0.05]),
    "varpi": 0.3,
    # component-rule thresholds (exact rationals: 67/30 and 4.1)
    "tau": np.array([67.0 / 30.0, 4.1]),
    "rho1": np.array([0.08955224, 0.67164179, 0.26865672]),
    "rho2": np.array([0.48780488, 0.07317073, 0.17073171]),
    # primal maximin (epigraph-refined; equals the dual to ~1e-15) and the
    # fine-scan dual optimum
    "primal_value": 0.03945221684713839,
    "dual_value": 0.03945221684713962,
    "dual_w": np.array([0.44180994, 0.55819006]),
    "rho_dual": np.array([0.3243456, 0.34206867, 0.176033]),
    # constrained (mixture) maximin, epigraph-refined
    "copt_w": np.array([0.42655012, 0.57344988]),
    "copt_value": 0.03494385818763055,
    "rho_copt": np.array([0.31793017, 0.32844863, 0.21250163]),
}


# ---------------------------------------------------------------------------
# frozen binary-test law: theta = (0.2, 0.8, 0.6), budget 0.3
# atoms ordered x = 1 then x = 0
# ---------------------------------------------------------------------------

CLASSIFICATION = {
    "theta": (0.2, 0.8, 0.6),
    "varpi": 0.3,
    "p_x": np.array([0.48, 0.52]),
    "p_y_given_x": np.array([1.0 / 3.0, 1.0 / 13.0]),
    # exact conditional moments (rows x=1, x=0; columns the three components)
    "sig2": np.array([
        [2.0 / 9.0, 2.0 / 9.0, 0.125],
        [12.0 / 169.0, 192.0 / 169.0, 3.0 / 169.0],
    ]),
    "pi": np.array([
        [0.4 / 3.0, 1.0 / 3.0, -0.5],
        [-1.6 / 13.0, -4.0 / 13.0, 6.0 / 13.0],
    ]),
    "var_psi": np.array([0.16, 0.8, 0.3]),
    "e_sig2": np.array([0.14358974, 0.6974359, 0.06923077]),
    "var_pi": np.array([0.01641026, 0.1025641, 0.23076923]),
    "xi": np.array([0.47863248, 2.32478632, 0.23076923]),
    "b": np.array([0.49504274, 2.42735043, 0.46153846]),
    # single-component optimal rules and the sum rule, (rho(x=1), rho(x=0))
    "rho1": np.array([0.38762756, 0.21911302]),
    "rho2": np.array([0.18118622, 0.40967426]),
    "rho3": np.array([0.44381378, 0.16724882]),
    "tau_sum": 3.125717294410077,
    "rho_sum": np.array([0.24142152, 0.35407244]),
    # efficiency bound triples under each rule
    "bounds_uniform": np.array([0.495043, 2.42735, 0.461538]),
    "bounds_rho1": np.array([0.4601, 3.073927, 0.427685]),
    "bounds_sum": np.array([0.562519, 2.21289, 0.505367]),
    # both maximin rules coincide with uniform here (flat optimum, value 0)
    "maximin_value": 0.0,
}
