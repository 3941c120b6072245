"""Joint estimation of the conditional mean and standard deviation of each
influence-function component given the first-phase variables.

The model is a quadratic sieve with full pairwise interactions on min-max
normalized inputs.  The conditional mean is gamma1' p(v); the conditional
standard deviation is softplus(gamma2' p(v)), kept positive by the link.  Both
coefficient blocks minimize a single loss

    mean_i [ (psi_i - gamma1' p_i)^2 / lam_i + lam_i ] + ridge (|gamma1|^2 + |gamma2|^2)

with lam_i = softplus(gamma2' p_i).  The loss is convex in each block, so it
is fit by block coordinate descent: the gamma1 block has a closed-form
weighted ridge solution, the gamma2 block takes damped Newton steps with a
gradient-descent fallback.  Pointwise the unpenalized loss is minimized at
lam = |residual|, which is what makes softplus(gamma2' p) an estimate of the
conditional standard deviation.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._kernels import softplus


@dataclass(frozen=True)
class BasisSpec:
    """Quadratic basis with interactions on min-max normalized variables."""

    v_min: np.ndarray
    v_max: np.ndarray

    @property
    def d_v(self):
        return len(self.v_min)

    @property
    def n_terms(self):
        d = self.d_v
        return 1 + 2 * d + d * (d - 1) // 2

    def transform(self, V):
        """Basis matrix of shape (n, n_terms); out-of-range values are clipped."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        span = self.v_max - self.v_min
        with np.errstate(invalid="ignore", divide="ignore"):
            x = (V - self.v_min) / span
        x = np.where(span > 0, x, 0.5)
        x = np.clip(x, 0.0, 1.0)
        n, d = x.shape
        cols = [np.ones(n)]
        cols.extend(x[:, j] for j in range(d))
        cols.extend(x[:, j] ** 2 for j in range(d))
        for j in range(d):
            for k in range(j + 1, d):
                cols.append(x[:, j] * x[:, k])
        return np.column_stack(cols)


def build_basis(V_pilot):
    V_pilot = np.atleast_2d(np.asarray(V_pilot, dtype=float))
    if V_pilot.shape[0] == 0:
        raise ValueError("cannot build a basis from an empty pilot sample")
    v_min = V_pilot.min(axis=0)
    v_max = V_pilot.max(axis=0)
    if np.any(v_max == v_min):
        flat = np.nonzero(v_max == v_min)[0]
        warnings.warn(
            f"pilot columns {flat.tolist()} are constant; they map to 0.5 in the basis",
            stacklevel=2,
        )
    return BasisSpec(v_min=v_min, v_max=v_max)


@dataclass(frozen=True)
class MomentModel:
    """Fitted conditional mean (gamma1) and standard deviation (gamma2)."""

    gamma1: np.ndarray
    gamma2: np.ndarray
    basis: BasisSpec

    def predict_pi(self, V):
        return self.basis.transform(V) @ self.gamma1

    def predict_sigma(self, V):
        return softplus(self.basis.transform(V) @ self.gamma2)


def default_ridge(d_v):
    return 0.1 * (d_v + 1)


def joint_loss(gamma1, gamma2, psi_vals, P, ridge):
    return K.mvr_loss(P, psi_vals, gamma1, gamma2, ridge)


def joint_loss_grads(gamma1, gamma2, psi_vals, P, ridge):
    """Analytic gradients of joint_loss with respect to both blocks."""
    g1 = K.mvr_gamma1_grad(P, psi_vals, gamma1, gamma2, ridge)
    g2, _ = K.mvr_gamma2_parts(P, psi_vals, gamma1, gamma2, ridge)
    return g1, g2


def _softplus_inv(s):
    # inverse of log(1 + exp(x)); s is floored away from zero by the caller
    if s > 30.0:
        return s
    return float(np.log(np.expm1(s)))


def _fit_one(P, psi, ridge, tol=1e-9, max_iter=200):
    m, k = P.shape
    eye = np.eye(k)

    # initialize at the homoscedastic fit: plain ridge for the mean, a
    # constant softplus intercept matching the residual spread
    g1 = np.linalg.solve(P.T @ P / m + ridge * eye, P.T @ psi / m)
    resid_sd = max(float(np.std(psi - P @ g1)), 1e-6)
    g2 = np.zeros(k)
    g2[0] = _softplus_inv(resid_sd)

    loss = K.mvr_loss(P, psi, g1, g2, ridge)
    if not np.isfinite(loss):
        raise ValueError("non-finite loss at initialization; check the inputs")
    history = [loss]

    for _ in range(max_iter):
        # mean block: exact minimizer given the current variance coefficients
        lam = softplus(P @ g2)
        A, rhs = K.gamma1_system(P, psi, lam, ridge)
        g1 = np.linalg.solve(A, rhs)
        loss = K.mvr_loss(P, psi, g1, g2, ridge)
        history.append(loss)

        # variance block: damped Newton, falling back to plain gradient
        grad, hess = K.mvr_gamma2_parts(P, psi, g1, g2, ridge)
        try:
            direction = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            direction = grad
        moved = False
        for direction in (direction, grad):
            step = 1.0
            for _ in range(60):
                cand = g2 - step * direction
                cand_loss = K.mvr_loss(P, psi, g1, cand, ridge)
                if cand_loss < loss:
                    g2, loss, moved = cand, cand_loss, True
                    break
                step *= 0.5
            if moved:
                break
        history.append(loss)
        if not np.isfinite(loss):
            raise ValueError("non-finite loss during block descent")
        if history[-3] - loss < tol:
            break

    return g1, g2, history


def fit_moments(psi_vals, V_pilot, basis=None, ridge=None):
    """Fit one MomentModel per influence-function component.

    psi_vals is (m,) or (m, d) of pilot influence values; returns a list of d
    fitted models.  The recorded loss history of every fit is non-increasing.
    """
    psi_vals = np.atleast_2d(np.asarray(psi_vals, dtype=float).T).T
    V_pilot = np.atleast_2d(np.asarray(V_pilot, dtype=float))
    if basis is None:
        basis = build_basis(V_pilot)
    if ridge is None:
        ridge = default_ridge(basis.d_v)
    P = np.ascontiguousarray(basis.transform(V_pilot))
    if P.shape[0] < basis.n_terms:
        warnings.warn(
            f"pilot size {P.shape[0]} is below the basis size {basis.n_terms}; "
            "the ridge term keeps the fit defined",
            stacklevel=2,
        )
    models = []
    for j in range(psi_vals.shape[1]):
        g1, g2, _ = _fit_one(P, np.ascontiguousarray(psi_vals[:, j]), ridge)
        models.append(MomentModel(gamma1=g1, gamma2=g2, basis=basis))
    return models


def fit_moments_with_history(psi_col, V_pilot, basis=None, ridge=None):
    """Single-component fit that also returns the per-block loss history."""
    V_pilot = np.atleast_2d(np.asarray(V_pilot, dtype=float))
    if basis is None:
        basis = build_basis(V_pilot)
    if ridge is None:
        ridge = default_ridge(basis.d_v)
    P = np.ascontiguousarray(basis.transform(V_pilot))
    g1, g2, history = _fit_one(P, np.ascontiguousarray(np.asarray(psi_col, dtype=float)), ridge)
    return MomentModel(gamma1=g1, gamma2=g2, basis=basis), history
