"""Sampling rules, the budget threshold solver, and empirical efficiency bounds.

A sampling rule maps first-phase rows V to inclusion probabilities in [0, 1].
The workhorse is the truncated rule min(lambda(v)/tau, 1) whose threshold tau
is calibrated so that the average inclusion probability over the eligible
units matches the sampling budget.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels as K

#: residual tolerance of the threshold bisection
TAU_RESIDUAL_TOL = 1e-10


# ---------------------------------------------------------------------------
# rule variants
# ---------------------------------------------------------------------------

class SamplingRule:
    def __call__(self, V):
        raise NotImplementedError


class Uniform(SamplingRule):
    """Constant inclusion probability."""

    def __init__(self, c):
        c = float(c)
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"uniform probability must lie in [0, 1], got {c}")
        self.c = c

    def __call__(self, V):
        return np.full(np.atleast_2d(V).shape[0], self.c)

    def __repr__(self):
        return f"Uniform({self.c})"


class Truncated(SamplingRule):
    """min(lambda(v) / tau, 1); tau == 0 means the saturated all-ones rule."""

    def __init__(self, lam, tau):
        if tau < 0:
            raise ValueError("threshold must be nonnegative")
        self.lam = lam
        self.tau = float(tau)

    def __call__(self, V):
        vals = np.asarray(self.lam(np.atleast_2d(V)), dtype=float)
        if self.tau == 0.0:
            return np.ones_like(vals)
        return np.minimum(vals / self.tau, 1.0)

    def __repr__(self):
        return f"Truncated(tau={self.tau})"


class Mixture(SamplingRule):
    """(1 - sum w) * base + sum_j w_j * component_j."""

    def __init__(self, base, components, weights):
        weights = np.asarray(weights, dtype=float)
        if len(weights) != len(components):
            raise ValueError("one weight per component is required")
        if np.any(weights < -1e-12) or weights.sum() > 1.0 + 1e-12:
            raise ValueError("mixture weights must be nonnegative with sum at most one")
        self.base = base
        self.components = list(components)
        self.weights = np.clip(weights, 0.0, None)

    def __call__(self, V):
        V = np.atleast_2d(V)
        out = (1.0 - self.weights.sum()) * self.base(V)
        for w, comp in zip(self.weights, self.components):
            if w != 0.0:
                out = out + w * comp(V)
        return out

    def __repr__(self):
        return f"Mixture(weights={self.weights.tolist()})"


class SigmaCombo:
    """Evaluable sqrt(sum_j c_j * sigma_j(v)^2) over per-component sigma models.

    Used as the lambda of truncated rules: a single component with c = (1,)
    gives that component's own sigma, equal coefficients give the sum rule,
    and c_j = w_j / b_j gives the weighted combination of the global maximin
    rule.
    """

    def __init__(self, sigma_fns, coefs):
        coefs = np.asarray(coefs, dtype=float)
        if len(coefs) != len(sigma_fns):
            raise ValueError("one coefficient per sigma component is required")
        if np.any(coefs < 0):
            raise ValueError("combination coefficients must be nonnegative")
        self.sigma_fns = list(sigma_fns)
        self.coefs = coefs

    def __call__(self, V):
        V = np.atleast_2d(V)
        sig2 = np.column_stack([np.asarray(f(V), dtype=float) ** 2 for f in self.sigma_fns])
        return K.combo_sigma(np.ascontiguousarray(sig2), self.coefs)


def eval_rule(rule, v):
    """Inclusion probability of `rule` at a single row or a matrix of rows."""
    v = np.asarray(v, dtype=float)
    vals = rule(np.atleast_2d(v))
    return float(vals[0]) if v.ndim <= 1 else vals


# ---------------------------------------------------------------------------
# threshold calibration
# ---------------------------------------------------------------------------

def solve_threshold(sigma_vals, target, weights=None):
    """Calibrate tau so that sum_i w_i * min(sigma_i/tau, 1) equals `target`.

    With the default uniform weights 1/n this is the empirical budget
    equation mean_i min(sigma_i/tau, 1) = target.  Passing weights supports
    both masked budgets (weights (1-R1)/n with target varpi - kappa) and
    exact discrete laws (weights = atom probabilities).

    Returns 0.0 as a sentinel when the target meets or exceeds the total
    available weight; the caller's rule is then identically one.
    """
    sigma_vals = np.ascontiguousarray(np.asarray(sigma_vals, dtype=float))
    if np.any(sigma_vals < 0):
        raise ValueError("sigma values must be nonnegative")
    n = len(sigma_vals)
    if weights is None:
        weights = np.full(n, 1.0 / n)
    else:
        weights = np.ascontiguousarray(np.asarray(weights, dtype=float))
        if len(weights) != n or np.any(weights < 0):
            raise ValueError("weights must be nonnegative, one per sigma value")
    available = float(weights.sum())
    if target <= 0:
        raise ValueError(f"target fraction must be positive, got {target}")
    if target >= available - 1e-15:
        return 0.0
    sig_max = float(sigma_vals.max(initial=0.0))
    if (weights * sigma_vals).sum() <= 0:
        raise ValueError("all sigma values with positive weight are zero; rule undefined")

    lo = 1e-12 * sig_max
    hi = float((weights * sigma_vals).sum()) / target * (1.0 + 1e-6)
    # h is non-increasing in tau; h(lo) ~ available > target and
    # h(hi) <= sum(w sigma)/hi < target, but guard the bracket anyway
    if K.budget_value(sigma_vals, weights, lo) < target - 1e-12:
        raise ValueError(
            "budget unreachable: zero-sigma rows carry too much weight for the target"
        )
    while K.budget_value(sigma_vals, weights, hi) > target:
        hi *= 2.0
    width_floor = 1e-14 * hi
    tau = hi
    for _ in range(300):
        tau = 0.5 * (lo + hi)
        h = K.budget_value(sigma_vals, weights, tau)
        if abs(h - target) <= TAU_RESIDUAL_TOL or (hi - lo) <= width_floor:
            break
        if h > target:
            lo = tau
        else:
            hi = tau
    return tau


# ---------------------------------------------------------------------------
# rule construction
# ---------------------------------------------------------------------------

def _budget_weights(n_rows, weights, mask):
    if weights is None:
        weights = np.full(n_rows, 1.0 / n_rows)
    else:
        weights = np.asarray(weights, dtype=float)
    if mask is not None:
        weights = weights * np.asarray(mask, dtype=float)
    return weights


def scalar_optimal_rule(sigma_fn, V, varpi, kappa=0.0, mask=None, weights=None):
    """Truncated rule driven by a single component's conditional sigma.

    The threshold solves the budget equation over the eligible (non-pilot)
    units at target varpi - kappa, so the realized budget identity holds
    exactly.
    """
    if not 0.0 <= kappa < varpi <= 1.0:
        raise ValueError(f"need 0 <= kappa < varpi <= 1, got kappa={kappa}, varpi={varpi}")
    V = np.atleast_2d(V)
    sig = np.asarray(sigma_fn(V), dtype=float)
    w = _budget_weights(V.shape[0], weights, mask)
    tau = solve_threshold(sig, varpi - kappa, weights=w)
    return Truncated(sigma_fn, tau)


def sum_rule(sigma_fns, V, varpi, kappa=0.0, mask=None, weights=None):
    """Truncated rule driven by sqrt(sum_j sigma_j^2) across all components."""
    lam = SigmaCombo(sigma_fns, np.ones(len(sigma_fns)))
    return scalar_optimal_rule(lam, V, varpi, kappa=kappa, mask=mask, weights=weights)


# ---------------------------------------------------------------------------
# empirical efficiency bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalBound:
    """Per-component efficiency bound pieces over a fixed set of rows.

    xi_j is the weighted mean of sigma_j^2 / rho0; b_j = xi_j + Var[Pi_j].
    bound_under evaluates the weighted mean of sigma_j^2 / rho plus Var[Pi_j]
    for any other rule on the same rows.
    """

    V: np.ndarray
    sig2: np.ndarray  # (n, d)
    pi: np.ndarray  # (n, d)
    rho0_vals: np.ndarray
    weights: np.ndarray
    xi: np.ndarray
    var_pi: np.ndarray
    b: np.ndarray

    @classmethod
    def from_tables(cls, V, sig2, pi, rho0_vals, weights=None):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        sig2 = np.atleast_2d(np.asarray(sig2, dtype=float))
        pi = np.atleast_2d(np.asarray(pi, dtype=float))
        rho0_vals = np.asarray(rho0_vals, dtype=float)
        n = V.shape[0]
        if weights is None:
            weights = np.full(n, 1.0 / n)
        else:
            weights = np.asarray(weights, dtype=float)
        if np.any(rho0_vals <= 0):
            raise ValueError("benchmark rule must be strictly positive on every row")
        xi = (weights[:, None] * sig2 / rho0_vals[:, None]).sum(axis=0)
        mean_pi = (weights[:, None] * pi).sum(axis=0)
        var_pi = (weights[:, None] * (pi - mean_pi) ** 2).sum(axis=0)
        return cls(
            V=V,
            sig2=sig2,
            pi=pi,
            rho0_vals=rho0_vals,
            weights=weights,
            xi=xi,
            var_pi=var_pi,
            b=xi + var_pi,
        )

    @classmethod
    def from_rules(cls, sigma_fns, pi_fns, rho0, V, weights=None):
        V = np.atleast_2d(np.asarray(V, dtype=float))
        sig2 = np.column_stack([np.asarray(f(V), dtype=float) ** 2 for f in sigma_fns])
        pi = np.column_stack([np.asarray(f(V), dtype=float) for f in pi_fns])
        return cls.from_tables(V, sig2, pi, rho0(V), weights=weights)

    @property
    def d(self):
        return self.sig2.shape[1]

    def rho_values(self, rule):
        return rule(self.V) if callable(rule) else np.asarray(rule, dtype=float)

    def mean_sig2_over(self, rho_vals):
        """Weighted mean of sigma_j^2 / rho per component."""
        rho_vals = np.asarray(rho_vals, dtype=float)
        bad = rho_vals <= 0
        if np.any(bad & (self.sig2 > 0).any(axis=1)):
            raise ValueError("rule vanishes on a row with positive sigma")
        safe = np.where(bad, 1.0, rho_vals)
        ratio = self.sig2 / safe[:, None]
        return (self.weights[:, None] * ratio).sum(axis=0)

    def bound_under(self, rule):
        """Efficiency bound vector mean[sigma^2/rho] + Var[Pi] under `rule`."""
        return self.mean_sig2_over(self.rho_values(rule)) + self.var_pi


def empirical_bound(sigma_fns, pi_fns, rho0, V, weights=None):
    return EmpiricalBound.from_rules(sigma_fns, pi_fns, rho0, V, weights=weights)
