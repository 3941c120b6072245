"""Numeric kernels shared by the rule solvers and the moment fitter.

Every kernel has a pure-numpy implementation and, when numba is installed, a
JIT-compiled twin.  The active backend is chosen once at import time from the
``TWOPHASE_BACKEND`` environment variable ("numba" or "numpy"); the default is
numba whenever it imports.  Results are deterministic within a backend; across
backends the summation order differs, so agreement is only up to rounding
(see tests).
"""

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False


def _pick_backend():
    choice = os.environ.get("TWOPHASE_BACKEND", "").strip().lower()
    if choice == "numba":
        if not HAS_NUMBA:
            raise ImportError("TWOPHASE_BACKEND=numba but numba is not installed")
        return "numba"
    if choice == "numpy":
        return "numpy"
    if choice:
        raise ValueError(f"TWOPHASE_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    return "numba" if HAS_NUMBA else "numpy"


BACKEND = _pick_backend()


def softplus(x):
    """log(1 + exp(x)), stable for large |x|."""
    return np.logaddexp(0.0, x)


def sigmoid(x):
    # np.where evaluates both branches, so the inactive one may overflow
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def budget_value_numpy(sigma, weights, tau):
    """Weighted budget curve sum_i w_i * min(sigma_i / tau, 1).

    tau == 0 is the saturated sentinel: the rule is identically one, so the
    value is just the total weight.
    """
    if tau <= 0.0:
        return float(weights.sum())
    return float(np.minimum(sigma / tau, 1.0) @ weights)


def combo_sigma_numpy(sig2, coefs):
    """Row-wise sqrt(sum_j c_j * sigma_j^2) for an (n, d) variance table."""
    return np.sqrt(np.maximum(sig2 @ coefs, 0.0))


def mvr_loss_numpy(P, psi, g1, g2, ridge):
    """Joint mean/variance loss: mean(resid^2 / lam + lam) + ridge penalty."""
    lam = np.logaddexp(0.0, P @ g2)
    r = psi - P @ g1
    m = psi.shape[0]
    return float((r * r / lam + lam).sum() / m + ridge * (g1 @ g1 + g2 @ g2))


def mvr_gamma1_grad_numpy(P, psi, g1, g2, ridge):
    """Gradient of the joint loss in the mean-coefficient block."""
    lam = np.logaddexp(0.0, P @ g2)
    r = psi - P @ g1
    m = psi.shape[0]
    return -2.0 / m * (P.T @ (r / lam)) + 2.0 * ridge * g1


def mvr_gamma2_parts_numpy(P, psi, g1, g2, ridge):
    """Gradient and Hessian of the joint loss in the variance-coefficient block."""
    m, _ = P.shape
    eta = P @ g2
    lam = np.logaddexp(0.0, eta)
    sig = sigmoid(eta)
    curv = sig * (1.0 - sig)
    r = psi - P @ g1
    r2 = r * r
    gcoef = (1.0 - r2 / (lam * lam)) * sig / m
    hcoef = (r2 * (2.0 * sig * sig / lam**3 - curv / (lam * lam)) + curv) / m
    grad = P.T @ gcoef + 2.0 * ridge * g2
    hess = (P * hcoef[:, None]).T @ P
    hess[np.diag_indices_from(hess)] += 2.0 * ridge
    return grad, hess


def gamma1_system_numpy(P, psi, lam, ridge):
    """Normal equations A @ g1 = rhs of the weighted ridge least-squares block."""
    m = psi.shape[0]
    w = 1.0 / (lam * m)
    A = (P * w[:, None]).T @ P
    A[np.diag_indices_from(A)] += ridge
    rhs = P.T @ (psi * w)
    return A, rhs


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def budget_value_numba(sigma, weights, tau):
        total = 0.0
        if tau <= 0.0:
            for i in range(sigma.shape[0]):
                total += weights[i]
            return total
        for i in range(sigma.shape[0]):
            v = sigma[i] / tau
            if v > 1.0:
                v = 1.0
            total += weights[i] * v
        return total

    @njit(cache=True)
    def combo_sigma_numba(sig2, coefs):
        n, d = sig2.shape
        out = np.empty(n)
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += sig2[i, j] * coefs[j]
            if acc < 0.0:
                acc = 0.0
            out[i] = np.sqrt(acc)
        return out

    @njit(cache=True)
    def _softplus1(x):
        if x > 0.0:
            return x + np.log1p(np.exp(-x))
        return np.log1p(np.exp(x))

    @njit(cache=True)
    def _sigmoid1(x):
        if x >= 0.0:
            return 1.0 / (1.0 + np.exp(-x))
        e = np.exp(x)
        return e / (1.0 + e)

    @njit(cache=True)
    def mvr_loss_numba(P, psi, g1, g2, ridge):
        m, K = P.shape
        acc = 0.0
        for i in range(m):
            eta = 0.0
            mu = 0.0
            for k in range(K):
                eta += P[i, k] * g2[k]
                mu += P[i, k] * g1[k]
            lam = _softplus1(eta)
            r = psi[i] - mu
            acc += r * r / lam + lam
        reg = 0.0
        for k in range(K):
            reg += g1[k] * g1[k] + g2[k] * g2[k]
        return acc / m + ridge * reg

    @njit(cache=True)
    def mvr_gamma1_grad_numba(P, psi, g1, g2, ridge):
        m, K = P.shape
        grad = np.zeros(K)
        for i in range(m):
            eta = 0.0
            mu = 0.0
            for k in range(K):
                eta += P[i, k] * g2[k]
                mu += P[i, k] * g1[k]
            c = (psi[i] - mu) / _softplus1(eta)
            for k in range(K):
                grad[k] -= 2.0 * c * P[i, k]
        for k in range(K):
            grad[k] = grad[k] / m + 2.0 * ridge * g1[k]
        return grad

    @njit(cache=True)
    def mvr_gamma2_parts_numba(P, psi, g1, g2, ridge):
        m, K = P.shape
        grad = np.zeros(K)
        hess = np.zeros((K, K))
        for i in range(m):
            eta = 0.0
            mu = 0.0
            for k in range(K):
                eta += P[i, k] * g2[k]
                mu += P[i, k] * g1[k]
            lam = _softplus1(eta)
            sig = _sigmoid1(eta)
            curv = sig * (1.0 - sig)
            r = psi[i] - mu
            r2 = r * r
            gc = (1.0 - r2 / (lam * lam)) * sig / m
            hc = (r2 * (2.0 * sig * sig / lam**3 - curv / (lam * lam)) + curv) / m
            for k in range(K):
                grad[k] += gc * P[i, k]
                for l in range(K):
                    hess[k, l] += hc * P[i, k] * P[i, l]
        for k in range(K):
            grad[k] += 2.0 * ridge * g2[k]
            hess[k, k] += 2.0 * ridge
        return grad, hess

    @njit(cache=True)
    def gamma1_system_numba(P, psi, lam, ridge):
        m, K = P.shape
        A = np.zeros((K, K))
        rhs = np.zeros(K)
        for i in range(m):
            w = 1.0 / (lam[i] * m)
            for k in range(K):
                rhs[k] += psi[i] * w * P[i, k]
                for l in range(K):
                    A[k, l] += w * P[i, k] * P[i, l]
        for k in range(K):
            A[k, k] += ridge
        return A, rhs


if BACKEND == "numba":
    budget_value = budget_value_numba
    combo_sigma = combo_sigma_numba
    mvr_loss = mvr_loss_numba
    mvr_gamma1_grad = mvr_gamma1_grad_numba
    mvr_gamma2_parts = mvr_gamma2_parts_numba
    gamma1_system = gamma1_system_numba
else:
    budget_value = budget_value_numpy
    combo_sigma = combo_sigma_numpy
    mvr_loss = mvr_loss_numpy
    mvr_gamma1_grad = mvr_gamma1_grad_numpy
    mvr_gamma2_parts = mvr_gamma2_parts_numpy
    gamma1_system = gamma1_system_numpy
