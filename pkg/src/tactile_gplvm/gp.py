"""
Gaussian-process numerics shared by the latent variable model and the
dissimilarity-profile regressor.

Latent inputs are rows ``(r, phi)`` of an ``(n, 2)`` array; outputs are an
``(n, D)`` matrix. Every solve goes through a Cholesky factor of

    K = k(X, X) + sigma_n^2 I

with the squared-exponential kernel

    k(x, x') = sigma_f^2 exp(-[(r - r')^2 / 2 l_r^2 + (phi - phi')^2 / 2 l_phi^2]).

All functions are pure; nothing here holds state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

LOG_2PI = math.log(2.0 * math.pi)


class FactorizationError(np.linalg.LinAlgError):
    """Covariance matrix is numerically indefinite."""

    def __init__(self, pivot: int, value: float):
        super().__init__(f"Cholesky failed at pivot {pivot} (value {value:.3e})")
        self.pivot = pivot
        self.value = value


@dataclass(frozen=True)
class KernelParams:
    sigma_f: float
    l_r: float
    l_phi: float

    def __post_init__(self):
        for name in ("sigma_f", "l_r", "l_phi"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")

    def as_array(self) -> np.ndarray:
        return np.array([self.sigma_f, self.l_r, self.l_phi])

    @classmethod
    def from_array(cls, a) -> "KernelParams":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class NoiseLevel:
    sigma_n: float = 1.14

    def __post_init__(self):
        if not (math.isfinite(self.sigma_n) and self.sigma_n > 0):
            raise ValueError(f"sigma_n must be finite and > 0, got {self.sigma_n}")


@dataclass(frozen=True)
class LatentPoint:
    r: float
    phi: float

    def __post_init__(self):
        if not (math.isfinite(self.r) and math.isfinite(self.phi)):
            raise ValueError(f"latent point must be finite, got ({self.r}, {self.phi})")

    def as_array(self) -> np.ndarray:
        return np.array([self.r, self.phi])


@dataclass(frozen=True)
class CovarianceFactor:
    """``K`` together with its lower Cholesky factor ``L`` (K = L L^T)."""

    K: np.ndarray
    L: np.ndarray
    log_det: float

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def solve(self, B: np.ndarray) -> np.ndarray:
        """Return K^{-1} B."""
        return cho_solve((self.L, True), B, check_finite=False)

    def inverse(self) -> np.ndarray:
        # Only the gradient needs the full K^{-1}; still formed from the factor.
        return self.solve(np.eye(self.n))


def as_latents(X) -> np.ndarray:
    """Coerce a sequence of LatentPoint / pairs into a finite ``(n, 2)`` array."""
    if isinstance(X, np.ndarray):
        arr = np.asarray(X, dtype=float)
    else:
        rows = [x.as_array() if isinstance(x, LatentPoint) else x for x in X]
        arr = np.asarray(rows, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"latent inputs must have shape (n, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("latent inputs contain non-finite values")
    return arr


def kernel_eval(a: LatentPoint, b: LatentPoint, p: KernelParams) -> float:
    """Squared-exponential covariance between two latent points."""
    dr = a.r - b.r
    dphi = a.phi - b.phi
    return p.sigma_f**2 * math.exp(-(dr * dr / (2 * p.l_r**2) + dphi * dphi / (2 * p.l_phi**2)))


def kernel_matrix(A: np.ndarray, B: np.ndarray, p: KernelParams) -> np.ndarray:
    """Cross-covariance ``k(A_i, B_j)`` for ``(n, 2)`` and ``(m, 2)`` inputs."""
    dr = A[:, 0:1] - B[None, :, 0]
    dphi = A[:, 1:2] - B[None, :, 1]
    return p.sigma_f**2 * np.exp(-0.5 * (dr**2 / p.l_r**2 + dphi**2 / p.l_phi**2))


def cholesky_factor(K: np.ndarray) -> CovarianceFactor:
    """Factor a symmetric matrix, reporting the first non-positive pivot."""
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        # numpy does not say where it failed; redo it by hand to find out
        n = K.shape[0]
        L = np.zeros_like(K)
        for j in range(n):
            d = K[j, j] - L[j, :j] @ L[j, :j]
            if not d > 0:
                raise FactorizationError(j, float(d)) from None
            L[j, j] = math.sqrt(d)
            L[j + 1 :, j] = (K[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
        raise FactorizationError(-1, float("nan")) from None
    log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
    return CovarianceFactor(K=K, L=L, log_det=log_det)


def build_covariance(X, p: KernelParams, noise: NoiseLevel) -> CovarianceFactor:
    X = as_latents(X)
    if X.shape[0] == 0:
        raise ValueError("cannot build a covariance over zero inputs")
    K = kernel_matrix(X, X, p)
    K[np.diag_indices_from(K)] += noise.sigma_n**2
    return cholesky_factor(K)


def _as_outputs(Y, n: int) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    if Y.shape[0] != n:
        raise ValueError(f"Y has {Y.shape[0]} rows but there are {n} inputs")
    if Y.shape[1] < 1:
        raise ValueError("Y must have at least one output column")
    return Y


def log_marginal_likelihood(X, Y, p: KernelParams, noise: NoiseLevel) -> float:
    """GP-LVM log marginal likelihood.

    ``L = -(D/2) tr(K^{-1} (1/D) Y Y^T) - (D/2) log|K| - (D n / 2) log 2 pi``

    The trace is evaluated as the squared Frobenius norm of ``L^{-1} Y`` so
    no inverse is ever formed.
    """
    X = as_latents(X)
    Y = _as_outputs(Y, X.shape[0])
    n, D = Y.shape
    cf = build_covariance(X, p, noise)
    W = solve_triangular(cf.L, Y, lower=True, check_finite=False)
    trace = float(np.sum(W * W))
    return -(D / 2.0) * (trace / D) - (D / 2.0) * cf.log_det - (D * n / 2.0) * LOG_2PI


@dataclass(frozen=True)
class LmlGradient:
    """Partials of the log marginal likelihood."""

    value: float
    dX: np.ndarray  # (n, 2): d/dr_i, d/dphi_i
    d_sigma_f: float
    d_l_r: float
    d_l_phi: float

    @property
    def d_params(self) -> np.ndarray:
        return np.array([self.d_sigma_f, self.d_l_r, self.d_l_phi])


def lml_gradient(X, Y, p: KernelParams, noise: NoiseLevel) -> LmlGradient:
    """Analytic gradient of :func:`log_marginal_likelihood`.

    With ``A = K^{-1} Y`` the sensitivity to ``K`` is
    ``G = 1/2 (A A^T - D K^{-1})`` and each partial is ``sum(G * dK)``.
    """
    X = as_latents(X)
    Y = _as_outputs(Y, X.shape[0])
    n, D = Y.shape
    cf = build_covariance(X, p, noise)
    A = cf.solve(Y)
    value = -0.5 * float(np.sum(Y * A)) - (D / 2.0) * cf.log_det - (D * n / 2.0) * LOG_2PI
    G = 0.5 * (A @ A.T - D * cf.inverse())

    Kf = kernel_matrix(X, X, p)
    dr = X[:, 0:1] - X[None, :, 0]
    dphi = X[:, 1:2] - X[None, :, 1]

    d_sigma_f = float(np.sum(G * Kf)) * 2.0 / p.sigma_f
    d_l_r = float(np.sum(G * Kf * dr**2)) / p.l_r**3
    d_l_phi = float(np.sum(G * Kf * dphi**2)) / p.l_phi**3

    # dK_ij/dx_i only touches row and column i; G symmetric gives the factor 2
    GK = G * Kf
    dX = np.empty((n, 2))
    dX[:, 0] = -2.0 * np.sum(GK * dr, axis=1) / p.l_r**2
    dX[:, 1] = -2.0 * np.sum(GK * dphi, axis=1) / p.l_phi**2
    return LmlGradient(value, dX, d_sigma_f, d_l_r, d_l_phi)


def gp_posterior(
    X_train, y_train, x_query, p: KernelParams, noise: NoiseLevel
) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean GP predictive mean and variance (noise included) at ``x_query``.

    Inputs may be latent pairs or plain scalars; scalars are lifted to
    ``(x, 0)`` so ``l_phi`` has no effect.
    """
    X_train = _lift(X_train)
    if X_train.shape[0] == 0:
        raise ValueError("gp_posterior needs at least one training point")
    x_query = _lift(x_query)
    y = np.asarray(y_train, dtype=float).reshape(-1)
    if y.shape[0] != X_train.shape[0]:
        raise ValueError("y_train length does not match X_train")
    cf = build_covariance(X_train, p, noise)
    alpha = cf.solve(y)
    Ks = kernel_matrix(x_query, X_train, p)
    mean = Ks @ alpha
    V = solve_triangular(cf.L, Ks.T, lower=True, check_finite=False)
    var = p.sigma_f**2 + noise.sigma_n**2 - np.sum(V * V, axis=0)
    return mean, np.maximum(var, noise.sigma_n**2)


def _lift(x) -> np.ndarray:
    if isinstance(x, LatentPoint):
        x = [x]
    if isinstance(x, Sequence) and x and isinstance(x[0], LatentPoint):
        return as_latents(x)
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 1:
        arr = np.column_stack([arr, np.zeros_like(arr)])
    return as_latents(arr)


class ConvergenceWarning(RuntimeWarning):
    """Optimizer stopped on its iteration budget rather than its tolerance."""


# log-space box for (sigma_f, l_r, l_phi)
DEFAULT_PARAM_BOUNDS = ((1e-3, 1e4), (1e-1, 1e3), (1e-2, 1e3))


@dataclass(frozen=True)
class ParamFit:
    params: KernelParams
    log_likelihood: float
    converged: bool
    iterations: int


def fit_kernel_params(
    X,
    Y,
    noise: NoiseLevel,
    init: KernelParams,
    bounds=DEFAULT_PARAM_BOUNDS,
    max_iter: int = 200,
    gtol: float = 1e-6,
) -> ParamFit:
    """Maximize the log marginal likelihood over kernel hyperparameters.

    Latents stay fixed. Optimization runs L-BFGS-B in log space on the
    analytic gradient; the result is never worse than ``init``.
    """
    from scipy.optimize import minimize

    X = as_latents(X)
    Y = _as_outputs(Y, X.shape[0])
    log_bounds = [(math.log(lo), math.log(hi)) for lo, hi in bounds]
    x0 = np.clip(np.log(init.as_array()), [b[0] for b in log_bounds], [b[1] for b in log_bounds])

    def objective(z):
        p = KernelParams.from_array(np.exp(z))
        try:
            g = lml_gradient(X, Y, p, noise)
        except FactorizationError:
            return np.inf, np.zeros(3)
        return -g.value, -g.d_params * np.exp(z)

    f0, _ = objective(x0)
    res = minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=log_bounds,
                   options={"maxiter": max_iter, "gtol": gtol})
    if not np.isfinite(res.fun) or res.fun > f0:
        return ParamFit(KernelParams.from_array(np.exp(x0)), -f0, False, int(res.nit))
    return ParamFit(KernelParams.from_array(np.exp(res.x)), -float(res.fun),
                    bool(res.success), int(res.nit))
