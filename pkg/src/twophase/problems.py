"""Catalog of estimation problems and their full-data influence functions.

Each problem knows its first-phase layout V, its expensive second-phase block
U, how to evaluate the influence function psi(V, U; theta, eta) row-wise, how
to fit its nuisance components on a pilot subsample, and how to solve the
weighted estimating equation sum_i w_i psi_i(theta) = 0.  All catalog psi are
affine in theta (the classification triple is triangular), so the solves are
direct.

Layout conventions (column order inside V / U):

    mean / multi_mean:        V = [z_1..z_q],        U = [y_1..y_d]
    linear_coef:              V = [y, z_1..z_q],     U = [x_1..x_d]
    ate_binary:               V = [y, t, z_1..z_q],  U = [x]
    ate_multi (arms 0..k-1):  V = [y, t, z_1..z_q],  U = [x]
    classification_triple:    V = [x],               U = [y]
"""

from dataclasses import dataclass, field

import numpy as np

from ._kernels import sigmoid

Z975 = 1.959964


# ---------------------------------------------------------------------------
# free-standing influence function evaluators
# ---------------------------------------------------------------------------

def psi_mean(u, theta):
    """Influence function u - theta for a vector of means, row-wise."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    theta = np.asarray(theta, dtype=float)
    if u.shape[1] != theta.shape[0]:
        raise ValueError(f"u has {u.shape[1]} columns but theta has length {theta.shape[0]}")
    return u - theta


def psi_linear(y, z, x, theta, alpha0, beta0, m_inv):
    """Influence function of regression coefficients on expensive covariates.

    Row-wise value m_inv @ (x - z @ alpha0.T) * (y - x @ theta - z @ beta0):
    the covariate residualized on the cheap block, scaled by the outcome
    residual, and normalized by the inverse second moment of the residualized
    covariate.
    """
    y = np.asarray(y, dtype=float)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rx = x - z @ np.atleast_2d(alpha0).T
    ry = y - x @ np.asarray(theta, dtype=float) - z @ np.asarray(beta0, dtype=float)
    return (rx * ry[:, None]) @ np.atleast_2d(m_inv).T


def psi_ate_binary(y, t, pi, m1, m0, theta):
    """AIPW influence function for a binary treatment effect, row-wise.

    pi, m1, m0 are the propensity and the two outcome regressions already
    evaluated at each row's (x, z).
    """
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0.0) or np.any(pi >= 1.0):
        raise ValueError("propensity values must lie strictly in (0, 1)")
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    a = (
        t * y / pi
        - (1.0 - t) * y / (1.0 - pi)
        - (t / pi - 1.0) * m1
        + ((1.0 - t) / (1.0 - pi) - 1.0) * m0
    )
    return (a - float(np.asarray(theta).squeeze()))[:, None]


def psi_ate_multi(y, t, probs, marms, theta):
    """Componentwise arm-versus-control AIPW influence function.

    probs is (n, k) of arm probabilities (columns sum to one row-wise), marms
    is (n, k) of per-arm outcome regressions, theta has length k-1; component
    j compares arm j to arm 0.
    """
    probs = np.asarray(probs, dtype=float)
    if np.any(probs <= 0.0):
        raise ValueError("arm probabilities must be strictly positive")
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    theta = np.asarray(theta, dtype=float)
    k = probs.shape[1]
    ind = np.eye(k)[t.astype(int)]
    base = ind[:, 0] * y / probs[:, 0]
    base_aug = (ind[:, 0] / probs[:, 0] - 1.0) * marms[:, 0]
    out = np.empty((len(y), k - 1))
    for j in range(1, k):
        arm = ind[:, j] * y / probs[:, j]
        arm_aug = (ind[:, j] / probs[:, j] - 1.0) * marms[:, j]
        out[:, j - 1] = arm - base - arm_aug + base_aug - theta[j - 1]
    return out


def psi_classification(x, y, theta):
    """Influence functions of (prevalence, sensitivity, specificity), row-wise."""
    t1, t2, t3 = (float(v) for v in theta)
    if not 0.0 < t1 < 1.0:
        raise ValueError("prevalence component must lie strictly in (0, 1)")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.column_stack(
        [
            y - t1,
            (x - t2) * y / t1,
            (1.0 - x - t3) * (1.0 - y) / (1.0 - t1),
        ]
    )


def two_phase_eif(psi, pi_v, rho_v, r):
    """Observed-data influence function r*psi/rho - (r/rho - 1)*pi, row-wise.

    Rows with r == 0 contribute only the pi term, so psi may hold arbitrary
    values there.
    """
    rho_v = np.asarray(rho_v, dtype=float)
    if np.any(rho_v <= 0.0):
        raise ValueError("inclusion probabilities must be strictly positive")
    w = (np.asarray(r, dtype=float) / rho_v)[:, None]
    psi = np.atleast_2d(np.asarray(psi, dtype=float))
    pi_v = np.atleast_2d(np.asarray(pi_v, dtype=float))
    return np.where(w > 0.0, w * psi, 0.0) - (w - 1.0) * pi_v


# ---------------------------------------------------------------------------
# nuisance fitting helpers
# ---------------------------------------------------------------------------

def _lstsq(A, b, what):
    sol, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < A.shape[1]:
        raise ValueError(f"rank-deficient design while fitting {what}")
    return sol

def _solve(A, b, what):
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular linear system while solving {what}") from exc


def fit_logistic(design, labels, max_iter=100, tol=1e-10):
    """Newton/IRLS fit of a binary logistic model; returns the coefficients."""
    design = np.asarray(design, dtype=float)
    labels = np.asarray(labels, dtype=float)
    coef = np.zeros(design.shape[1])
    for _ in range(max_iter):
        p = sigmoid(design @ coef)
        w = np.clip(p * (1.0 - p), 1e-10, None)
        grad = design.T @ (labels - p)
        hess = (design * w[:, None]).T @ design
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise ValueError("singular Hessian in logistic fit") from exc
        coef = coef + step
        if np.abs(step).max() < tol or np.abs(coef).max() > 1e4:
            break
    return coef


def fit_multinomial(design, arms, n_arms, max_iter=100, tol=1e-10):
    """Newton fit of a multinomial logistic model with arm 0 as reference.

    Returns coefficients of shape (n_arms - 1, p); arm j has linear index
    design @ coef[j-1] and arm 0 has index 0.
    """
    design = np.asarray(design, dtype=float)
    n, p = design.shape
    ind = np.eye(n_arms)[np.asarray(arms).astype(int)]
    coef = np.zeros((n_arms - 1, p))
    for _ in range(max_iter):
        eta = np.column_stack([np.zeros(n), design @ coef.T])
        eta -= eta.max(axis=1, keepdims=True)
        probs = np.exp(eta)
        probs /= probs.sum(axis=1, keepdims=True)
        grad = np.concatenate(
            [design.T @ (ind[:, j] - probs[:, j]) for j in range(1, n_arms)]
        )
        dim = (n_arms - 1) * p
        hess = np.empty((dim, dim))
        for j in range(1, n_arms):
            for k in range(1, n_arms):
                w = probs[:, j] * ((j == k) - probs[:, k])
                block = (design * w[:, None]).T @ design
                hess[(j - 1) * p : j * p, (k - 1) * p : k * p] = block
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise ValueError("singular Hessian in multinomial fit") from exc
        coef = coef + step.reshape(n_arms - 1, p)
        if np.abs(step).max() < tol or np.abs(coef).max() > 1e4:
            break
    return coef


# ---------------------------------------------------------------------------
# nuisance containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearNuisance:
    alpha0: np.ndarray  # (d_x, d_z) regression of X on Z
    beta0: np.ndarray  # (d_z,)
    m_hat: np.ndarray  # (d_x, d_x) second moment of the residualized covariate
    m_inv: np.ndarray = field(init=False)

    def __post_init__(self):
        cond = np.linalg.cond(self.m_hat)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError(
                f"normalizing matrix is singular (condition number {cond:.2e})"
            )
        object.__setattr__(self, "m_inv", np.linalg.inv(self.m_hat))


@dataclass(frozen=True)
class AteNuisance:
    """Propensity and per-arm outcome models for treatment-effect problems.

    propensity_coef is None when the probabilities are declared known, in
    which case known_probs holds one constant per arm.
    """

    propensity_coef: np.ndarray | None
    outcome_coefs: np.ndarray  # (n_arms, 1 + d_x + d_z)
    known_probs: np.ndarray | None = None

    def arm_probs(self, x, z, n_arms):
        n = len(x)
        if self.known_probs is not None:
            return np.tile(self.known_probs, (n, 1))
        design = np.column_stack([np.ones(n), x, z])
        if n_arms == 2:
            p1 = sigmoid(design @ self.propensity_coef)
            p1 = np.clip(p1, 1e-12, 1.0 - 1e-12)
            return np.column_stack([1.0 - p1, p1])
        eta = np.column_stack([np.zeros(n), design @ self.propensity_coef.T])
        eta -= eta.max(axis=1, keepdims=True)
        probs = np.exp(eta)
        probs /= probs.sum(axis=1, keepdims=True)
        return np.clip(probs, 1e-12, None)

    def arm_means(self, x, z):
        design = np.column_stack([np.ones(len(x)), x, z])
        return design @ self.outcome_coefs.T


# ---------------------------------------------------------------------------
# problem classes
# ---------------------------------------------------------------------------

class Problem:
    """Interface shared by the catalog problems."""

    id: str
    d: int

    def psi(self, V, U, theta, eta):
        raise NotImplementedError

    def fit_nuisance(self, V, U, rows):
        raise NotImplementedError

    def solve_weighted(self, V, U, weights, eta):
        """Solve sum_i weights_i * psi_i(theta) = 0; rows with weight 0 are skipped."""
        raise NotImplementedError


class MeanProblem(Problem):
    """Mean of one or several expensive outcomes; V is the covariate block."""

    def __init__(self, d=1):
        self.d = int(d)
        self.id = "mean" if self.d == 1 else "multi_mean"

    def psi(self, V, U, theta, eta=None):
        return psi_mean(U, theta)

    def fit_nuisance(self, V, U, rows):
        return None

    def solve_weighted(self, V, U, weights, eta=None):
        keep = weights > 0
        w = weights[keep]
        total = w.sum()
        if total <= 0:
            raise ValueError("no observations with positive weight")
        return (w[:, None] * np.atleast_2d(U)[keep]).sum(axis=0) / total


class LinearCoefProblem(Problem):
    """Coefficients on expensive covariates in a linear outcome model."""

    def __init__(self, d_x, d_z):
        self.d = int(d_x)
        self.d_z = int(d_z)
        self.id = "linear_coef"

    def split_v(self, V):
        V = np.atleast_2d(V)
        return V[:, 0], V[:, 1:]

    def psi(self, V, U, theta, eta):
        y, z = self.split_v(V)
        return psi_linear(y, z, U, theta, eta.alpha0, eta.beta0, eta.m_inv)

    def fit_nuisance(self, V, U, rows):
        y, z = self.split_v(V)
        y, z, x = y[rows], z[rows], np.atleast_2d(U)[rows]
        alpha0 = _lstsq(z, x, "covariate-on-covariate regression").T
        joint = _lstsq(np.column_stack([x, z]), y, "joint outcome regression")
        beta0 = joint[self.d :]
        rx = x - z @ alpha0.T
        m_hat = rx.T @ rx / len(y)
        return LinearNuisance(alpha0=alpha0, beta0=beta0, m_hat=m_hat)

    def solve_weighted(self, V, U, weights, eta):
        keep = weights > 0
        y, z = self.split_v(V)
        y, z, x, w = y[keep], z[keep], np.atleast_2d(U)[keep], weights[keep]
        rx = x - z @ eta.alpha0.T
        A = (rx * w[:, None]).T @ x
        rhs = (rx * w[:, None]).T @ (y - z @ eta.beta0)
        return _solve(A, rhs, "weighted estimating equation")


class AteBinaryProblem(Problem):
    """Average treatment effect of a binary treatment with one expensive covariate."""

    def __init__(self, d_z, known_propensity=None):
        self.d = 1
        self.d_z = int(d_z)
        self.id = "ate_binary"
        self.known_propensity = known_propensity

    def split_v(self, V):
        V = np.atleast_2d(V)
        return V[:, 0], V[:, 1], V[:, 2:]

    def psi(self, V, U, theta, eta):
        y, t, z = self.split_v(V)
        x = np.atleast_2d(U)[:, 0]
        probs = eta.arm_probs(x, z, 2)
        means = eta.arm_means(x, z)
        return psi_ate_binary(y, t, probs[:, 1], means[:, 1], means[:, 0], theta)

    def fit_nuisance(self, V, U, rows):
        y, t, z = self.split_v(V)
        y, t, z, x = y[rows], t[rows], z[rows], np.atleast_2d(U)[rows, 0]
        design = np.column_stack([np.ones(len(y)), x, z])
        if self.known_propensity is not None:
            coef, known = None, np.array(
                [1.0 - self.known_propensity, self.known_propensity]
            )
        else:
            coef, known = fit_logistic(design, t), None
        outcome = np.empty((2, design.shape[1]))
        for arm in (0, 1):
            sel = t == arm
            if not sel.any():
                raise ValueError(f"pilot sample has no observations in arm {arm}")
            outcome[arm] = _lstsq(design[sel], y[sel], f"arm-{arm} outcome regression")
        return AteNuisance(propensity_coef=coef, outcome_coefs=outcome, known_probs=known)

    def solve_weighted(self, V, U, weights, eta):
        keep = weights > 0
        y, t, z = self.split_v(V)
        y, t, z, w = y[keep], t[keep], z[keep], weights[keep]
        x = np.atleast_2d(U)[keep, 0]
        probs = eta.arm_probs(x, z, 2)
        means = eta.arm_means(x, z)
        a = psi_ate_binary(y, t, probs[:, 1], means[:, 1], means[:, 0], 0.0)[:, 0]
        return np.array([(w * a).sum() / w.sum()])


class AteMultiProblem(Problem):
    """Arm-versus-control treatment effects with k arms (component j: arm j vs 0)."""

    def __init__(self, d_z, n_arms=3, known_probs=None):
        self.n_arms = int(n_arms)
        self.d = self.n_arms - 1
        self.d_z = int(d_z)
        self.id = "ate_multi"
        self.known_probs = known_probs

    def split_v(self, V):
        V = np.atleast_2d(V)
        return V[:, 0], V[:, 1], V[:, 2:]

    def psi(self, V, U, theta, eta):
        y, t, z = self.split_v(V)
        x = np.atleast_2d(U)[:, 0]
        probs = eta.arm_probs(x, z, self.n_arms)
        means = eta.arm_means(x, z)
        return psi_ate_multi(y, t, probs, means, theta)

    def fit_nuisance(self, V, U, rows):
        y, t, z = self.split_v(V)
        y, t, z, x = y[rows], t[rows], z[rows], np.atleast_2d(U)[rows, 0]
        design = np.column_stack([np.ones(len(y)), x, z])
        if self.known_probs is not None:
            coef, known = None, np.asarray(self.known_probs, dtype=float)
        else:
            coef, known = fit_multinomial(design, t, self.n_arms), None
        outcome = np.empty((self.n_arms, design.shape[1]))
        for arm in range(self.n_arms):
            sel = t == arm
            if not sel.any():
                raise ValueError(f"pilot sample has no observations in arm {arm}")
            outcome[arm] = _lstsq(design[sel], y[sel], f"arm-{arm} outcome regression")
        return AteNuisance(propensity_coef=coef, outcome_coefs=outcome, known_probs=known)

    def solve_weighted(self, V, U, weights, eta):
        keep = weights > 0
        y, t, z = self.split_v(V)
        y, t, z, w = y[keep], t[keep], z[keep], weights[keep]
        x = np.atleast_2d(U)[keep, 0]
        probs = eta.arm_probs(x, z, self.n_arms)
        means = eta.arm_means(x, z)
        a = psi_ate_multi(y, t, probs, means, np.zeros(self.d))
        return (w[:, None] * a).sum(axis=0) / w.sum()


class ClassificationProblem(Problem):
    """Prevalence, sensitivity and specificity of a binary test.

    The cheap variable is the test result x, the expensive one the true
    label y.
    """

    def __init__(self):
        self.d = 3
        self.id = "classification_triple"

    def psi(self, V, U, theta, eta=None):
        x = np.atleast_2d(V)[:, 0]
        y = np.atleast_2d(U)[:, 0]
        return psi_classification(x, y, theta)

    def fit_nuisance(self, V, U, rows):
        return None

    def solve_weighted(self, V, U, weights, eta=None):
        keep = weights > 0
        x = np.atleast_2d(V)[keep, 0]
        y = np.atleast_2d(U)[keep, 0]
        w = weights[keep]
        tot = w.sum()
        wy = (w * y).sum()
        wn = (w * (1.0 - y)).sum()
        if tot <= 0 or wy <= 0 or wn <= 0:
            raise ValueError("weighted estimating equation needs mass in both classes")
        t1 = wy / tot
        t2 = (w * x * y).sum() / wy
        t3 = (w * (1.0 - x) * (1.0 - y)).sum() / wn
        if not 0.0 < t1 < 1.0:
            raise ValueError("estimated prevalence fell on the boundary")
        return np.array([t1, t2, t3])


# ---------------------------------------------------------------------------
# catalog-level helpers
# ---------------------------------------------------------------------------

def fit_nuisance(problem, V, U, pilot_rows):
    """Fit the problem's nuisance components on the pilot rows."""
    return problem.fit_nuisance(V, U, pilot_rows)


def solve_theta_pilot(problem, V, U, pilot_rows, eta):
    """Solve the unweighted estimating equation over the pilot rows."""
    return problem.solve_weighted(V, U, pilot_rows.astype(float), eta)


def make_problem(pid, d_v=None, d_u=None, n_arms=None, known_propensity=None):
    """Build a catalog problem from its identifier and layout dimensions.

    d_v / d_u are the column counts of V and U as laid out in the module
    docstring.
    """
    if pid in ("mean", "multi_mean"):
        return MeanProblem(d=d_u or 1)
    if pid == "linear_coef":
        return LinearCoefProblem(d_x=d_u or 1, d_z=(d_v or 2) - 1)
    if pid == "ate_binary":
        return AteBinaryProblem(d_z=(d_v or 3) - 2, known_propensity=known_propensity)
    if pid == "ate_multi":
        return AteMultiProblem(d_z=(d_v or 3) - 2, n_arms=n_arms or 3)
    if pid == "classification_triple":
        return ClassificationProblem()
    raise ValueError(f"unknown problem id {pid!r}")
