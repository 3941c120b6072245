"""Synthetic data-generating processes for the simulation harness.

Every generator shares the covariate block Z with independent U[-2.5, 2.5]
components and the direction zeta = 0.5/sqrt(q) * 1, so the index s = Z'zeta
has the same scale for every dimension q.  Heteroscedasticity enters through

    nu1(s) = sqrt(0.1 + (2 s)^4)        nu2(s) = exp(2 s)

The draw order inside each generator is fixed; reproducibility depends on it.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import sigmoid
from .problems import (
    AteBinaryProblem,
    AteMultiProblem,
    ClassificationProblem,
    LinearCoefProblem,
    MeanProblem,
)


@dataclass(frozen=True)
class Generated:
    V: np.ndarray
    U: np.ndarray
    theta0: np.ndarray
    problem: object


def _covariates(n, q, rng):
    Z = rng.uniform(-2.5, 2.5, size=(n, q))
    s = Z @ (np.full(q, 0.5 / np.sqrt(q)))
    return Z, s


def nu1(s):
    return np.sqrt(0.1 + (2.0 * s) ** 4)


def nu2(s):
    return np.exp(2.0 * s)


def gen_ate_scalar(n, q, rng):
    """Binary treatment with confounding through the expensive covariate X."""
    Z, s = _covariates(n, q, rng)
    X = s + rng.normal(0.0, 0.5, n)
    eps_y = rng.normal(0.0, 1.0, n)
    scale = np.exp(2.0 * s)
    Y0 = 0.5 * s + X + scale * eps_y
    Y1 = 1.5 + 0.5 * s - X + scale * eps_y
    p1 = sigmoid(0.5 * X - 0.1 * s)
    T = (rng.random(n) < p1).astype(float)
    Y = np.where(T == 1.0, Y1, Y0)
    V = np.column_stack([Y, T, Z])
    return Generated(V, X[:, None], np.array([1.5]), AteBinaryProblem(d_z=q))


def gen_ate_multi(n, q, rng):
    """Three treatment arms; components compare arms 1 and 2 to arm 0."""
    Z, s = _covariates(n, q, rng)
    X = s + rng.normal(0.0, 0.5, n)
    eps_y = rng.normal(0.0, 1.0, n)
    v1, v2 = nu1(s), nu2(s)
    Y0 = 0.5 * s + X + (0.5 + v2) * eps_y
    Y1 = 1.0 + 0.5 * s - X + (v1 + v2) * eps_y
    Y2 = 0.5 - 0.5 * s - 0.5 * X + v2 * eps_y
    e1 = np.exp(-0.1 * s + 0.25 * X)
    e2 = np.exp(0.1 * s - 0.25 * X)
    denom = 1.0 + e1 + e2
    p1, p2 = e1 / denom, e2 / denom
    u = rng.random(n)
    T = np.where(u < p1, 1.0, np.where(u < p1 + p2, 2.0, 0.0))
    Y = np.select([T == 1.0, T == 2.0], [Y1, Y2], default=Y0)
    V = np.column_stack([Y, T, Z])
    return Generated(V, X[:, None], np.array([1.0, 0.5]), AteMultiProblem(d_z=q, n_arms=3))


def gen_mean_scalar(n, q, rng):
    """Expensive scalar outcome with heteroscedastic noise."""
    Z, s = _covariates(n, q, rng)
    Y = 1.0 + s + nu1(s) * rng.normal(0.0, 1.0, n)
    return Generated(Z, Y[:, None], np.array([1.0]), MeanProblem(d=1))


def gen_mean_multi(n, q, rng):
    Z, s = _covariates(n, q, rng)
    Y1 = 1.0 - s + nu1(s) * rng.normal(0.0, 1.0, n)
    Y2 = np.sin(s) + nu2(s) * rng.normal(0.0, 1.0, n)
    return Generated(Z, np.column_stack([Y1, Y2]), np.array([1.0, 0.0]), MeanProblem(d=2))


def gen_reg_scalar(n, q, rng):
    """Linear outcome model with one expensive covariate."""
    Z, s = _covariates(n, q, rng)
    X = np.sin(s) + nu2(s) * rng.normal(0.0, 1.0, n)
    Y = s + X + rng.normal(0.0, 1.0, n)
    V = np.column_stack([Y, Z])
    return Generated(V, X[:, None], np.array([1.0]), LinearCoefProblem(d_x=1, d_z=q))


def gen_reg_multi(n, q, rng):
    Z, s = _covariates(n, q, rng)
    X1 = s + nu1(s) * rng.normal(0.0, 1.0, n)
    X2 = -s + nu2(s) * rng.normal(0.0, 1.0, n)
    Y = s + X2 + rng.normal(0.0, 1.0, n)
    V = np.column_stack([Y, Z])
    return Generated(V, np.column_stack([X1, X2]), np.array([0.0, 1.0]), LinearCoefProblem(d_x=2, d_z=q))


def gen_classification(n, rng, theta=(0.2, 0.8, 0.6)):
    """Binary test / binary label pairs from the (prevalence, sensitivity,
    specificity) parameterization; the label is the expensive variable."""
    t1, t2, t3 = theta
    y = (rng.random(n) < t1).astype(float)
    u = rng.random(n)
    x = np.where(y == 1.0, (u < t2).astype(float), (u < 1.0 - t3).astype(float))
    return Generated(x[:, None], y[:, None], np.asarray(theta, dtype=float), ClassificationProblem())


#: name -> (generator over (n, q, rng), default kappa constant as a function of q)
GENERATORS = {
    "ate_scalar": (gen_ate_scalar, lambda q: q + 1),
    "ate_multi": (gen_ate_multi, lambda q: q + 1),
    "mean_scalar": (gen_mean_scalar, lambda q: q),
    "mean_multi": (gen_mean_multi, lambda q: q),
    "reg_scalar": (gen_reg_scalar, lambda q: q + 1),
    "reg_multi": (gen_reg_multi, lambda q: q + 1),
}
