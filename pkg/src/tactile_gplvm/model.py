"""
Online GP-LVM over tactile frames.

The model is a set of labelled ``(r, phi) -> frame`` pairs plus kernel
hyperparameters. Inference of a new frame's latent position maximizes the
log marginal likelihood of the model augmented with that frame, optimizing
only the new latent. Because the existing points are fixed, the augmented
likelihood splits into the base likelihood plus the GP predictive density
of the new frame, which is what the optimizer actually evaluates.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize, minimize_scalar

from .gp import (
    LOG_2PI,
    ConvergenceWarning,
    KernelParams,
    LatentPoint,
    NoiseLevel,
    build_covariance,
    fit_kernel_params,
    kernel_matrix,
    log_marginal_likelihood,
)

R_STARTS = tuple(np.arange(-15.0, 15.1, 2.5))
PHI_STARTS = tuple(np.arange(-2.5, 2.6, 0.5))
# Only the best-scoring starts are polished by L-BFGS-B.
N_REFINE = 4
R_BOUNDS = (-30.0, 30.0)
PHI_BOUNDS = (-5.0, 5.0)
LINE_PHI_BOUNDS = (-4.0, 4.0)
DEFAULT_L_R = 5.0
DEFAULT_L_PHI = 1.0
MAX_ITER = 200
GTOL = 1e-6


@dataclass(frozen=True)
class ModelPoint:
    latent: LatentPoint
    output: np.ndarray
    source_line: str

    def __post_init__(self):
        out = np.asarray(self.output, dtype=float).reshape(-1)
        if not np.all(np.isfinite(out)):
            raise ValueError("model point output contains non-finite values")
        object.__setattr__(self, "output", out)


@dataclass(frozen=True)
class LatentEstimate:
    r: float
    phi: float
    log_likelihood: float
    low_confidence: bool = False

    @property
    def latent(self) -> LatentPoint:
        return LatentPoint(self.r, self.phi)


def initial_params(outputs: np.ndarray) -> KernelParams:
    sd = float(np.std(outputs)) if np.size(outputs) else 1.0
    return KernelParams(sd if sd > 0 else 1.0, DEFAULT_L_R, DEFAULT_L_PHI)


@dataclass(frozen=True)
class GplvmModel:
    """Immutable model value; :func:`augment_model` returns a new one."""

    points: tuple[ModelPoint, ...]
    params: KernelParams
    noise: NoiseLevel
    reference_tap: np.ndarray
    line_count: int = 0
    dim: int = field(default=0)

    def __post_init__(self):
        ref = np.asarray(self.reference_tap, dtype=float).reshape(-1)
        object.__setattr__(self, "reference_tap", ref)
        object.__setattr__(self, "points", tuple(self.points))
        dim = self.dim or ref.size
        object.__setattr__(self, "dim", dim)
        for pt in self.points:
            if pt.output.size != dim:
                raise ValueError(f"point output has {pt.output.size} dims, model has {dim}")

    @classmethod
    def empty(cls, reference_tap, noise: NoiseLevel = NoiseLevel(),
              params: KernelParams | None = None) -> "GplvmModel":
        ref = np.asarray(reference_tap, dtype=float)
        return cls((), params or initial_params(ref), noise, ref)

    @classmethod
    def from_reference(cls, reference_tap, noise: NoiseLevel = NoiseLevel()) -> "GplvmModel":
        """Fresh model holding only the reference tap, labelled (r=0, phi=0)."""
        ref = np.asarray(reference_tap, dtype=float)
        pt = ModelPoint(LatentPoint(0.0, 0.0), ref, "reference")
        return cls((pt,), initial_params(ref), noise, ref)

    @property
    def n(self) -> int:
        return len(self.points)

    @cached_property
    def X(self) -> np.ndarray:
        return np.array([p.latent.as_array() for p in self.points]).reshape(-1, 2)

    @cached_property
    def Y(self) -> np.ndarray:
        return np.array([p.output for p in self.points]).reshape(-1, self.dim)

    @cached_property
    def _predictor(self) -> "_Predictor":
        return _Predictor(self.X, self.Y, self.params, self.noise)

    def log_likelihood(self) -> float:
        if self.n == 0:
            return 0.0
        return log_marginal_likelihood(self.X, self.Y, self.params, self.noise)

    def with_params(self, params: KernelParams) -> "GplvmModel":
        return replace(self, params=params)

    # serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "params": {"sigma_f": self.params.sigma_f, "l_r": self.params.l_r,
                       "l_phi": self.params.l_phi},
            "noise": {"sigma_n": self.noise.sigma_n},
            "line_count": self.line_count,
            "reference_tap": self.reference_tap.tolist(),
            "points": [
                {"r": p.latent.r, "phi": p.latent.phi, "source_line": p.source_line,
                 "output": p.output.tolist()}
                for p in self.points
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GplvmModel":
        pts = [ModelPoint(LatentPoint(p["r"], p["phi"]), np.array(p["output"]), p["source_line"])
               for p in d["points"]]
        return cls(tuple(pts), KernelParams(**d["params"]), NoiseLevel(**d["noise"]),
                   np.array(d["reference_tap"]), d["line_count"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "GplvmModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


class _Predictor:
    """Cached factorization of the model covariance for repeated augmented evaluations."""

    def __init__(self, X, Y, params: KernelParams, noise: NoiseLevel):
        self.X, self.Y, self.p, self.noise = X, Y, params, noise
        self.D = Y.shape[1]
        self.prior_var = params.sigma_f**2 + noise.sigma_n**2
        if len(X):
            self.cf = build_covariance(X, params, noise)
            self.A = self.cf.solve(Y)
            self.Kinv = self.cf.inverse()
            W = solve_triangular(self.cf.L, Y, lower=True, check_finite=False)
            self.base = (-0.5 * float(np.sum(W * W)) - 0.5 * self.D * self.cf.log_det
                         - 0.5 * self.D * len(X) * LOG_2PI)
        else:
            self.cf = None
            self.A = np.zeros((0, self.D))
            self.Kinv = np.zeros((0, 0))
            self.base = 0.0

    def point_objective(self, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
        """Augmented likelihood for one new latent ``x`` and its gradient in ``x``."""
        p = self.p
        dr = x[0] - self.X[:, 0]
        dphi = x[1] - self.X[:, 1]
        k = p.sigma_f**2 * np.exp(-0.5 * (dr**2 / p.l_r**2 + dphi**2 / p.l_phi**2))
        dk_r = -k * dr / p.l_r**2
        dk_phi = -k * dphi / p.l_phi**2
        Kstack = np.stack([k, dk_r, dk_phi])
        mu, dmu_r, dmu_phi = Kstack @ self.A
        v = self.Kinv @ k
        s = max(self.prior_var - float(k @ v), 1e-12)
        resid = y - mu
        rss = float(resid @ resid)
        value = self.base - 0.5 * rss / s - 0.5 * self.D * math.log(s) - 0.5 * self.D * LOG_2PI
        ds = -2.0 * np.array([v @ dk_r, v @ dk_phi])
        dfit = np.array([resid @ dmu_r, resid @ dmu_phi])
        grad = dfit / s + 0.5 * rss * ds / s**2 - 0.5 * self.D * ds / s
        return value, grad

    def batch_objective(self, Xq: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Objective values (no gradient) at many candidate latents at once."""
        if len(self.X) == 0:
            return np.full(len(Xq), self.prior_objective(y))
        Kq = kernel_matrix(Xq, self.X, self.p)
        mu = Kq @ self.A
        s = np.maximum(self.prior_var - np.einsum("ij,ij->i", Kq @ self.Kinv, Kq), 1e-12)
        rss = np.sum((y - mu) ** 2, axis=1)
        return (self.base - 0.5 * rss / s - 0.5 * self.D * np.log(s)
                - 0.5 * self.D * LOG_2PI)

    def prior_objective(self, y: np.ndarray) -> float:
        """Objective for a latent infinitely far from every model point."""
        s = self.prior_var
        return self.base - 0.5 * float(y @ y) / s - 0.5 * self.D * math.log(s) - 0.5 * self.D * LOG_2PI

    def line_objective(self, Xn: np.ndarray, Yn: np.ndarray) -> float:
        """Augmented likelihood for a block of new points (Schur complement form)."""
        m = len(Xn)
        S = kernel_matrix(Xn, Xn, self.p)
        S[np.diag_indices_from(S)] += self.noise.sigma_n**2
        R = Yn
        if self.cf is not None:
            Ks = kernel_matrix(self.X, Xn, self.p)
            S = S - Ks.T @ self.cf.solve(Ks)
            R = Yn - Ks.T @ self.A
        Ls = np.linalg.cholesky(S)
        W = solve_triangular(Ls, R, lower=True, check_finite=False)
        logdet = 2.0 * float(np.sum(np.log(np.diag(Ls))))
        return (self.base - 0.5 * float(np.sum(W * W)) - 0.5 * self.D * logdet
                - 0.5 * self.D * m * LOG_2PI)


def _check_frame(y, model: GplvmModel) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != model.dim:
        raise ValueError(f"frame has {y.size} dims, model expects {model.dim}")
    if not np.all(np.isfinite(y)):
        raise ValueError("frame contains non-finite values")
    return y


def optimize_hyperparameters(model: GplvmModel, init: KernelParams | None = None) -> KernelParams:
    """Kernel hyperparameters maximizing the model likelihood with latents held fixed."""
    if model.n < 2:
        raise ValueError("need at least 2 model points to fit hyperparameters")
    fit = fit_kernel_params(model.X, model.Y, model.noise, init or model.params,
                            max_iter=MAX_ITER, gtol=GTOL)
    if not fit.converged:
        warnings.warn(f"hyperparameter fit stopped after {fit.iterations} iterations "
                      "without converging; returning best so far", ConvergenceWarning)
    return fit.params


def infer_latent(y_new, model: GplvmModel,
                 r_starts: Iterable[float] = R_STARTS,
                 phi_starts: Iterable[float] = PHI_STARTS,
                 n_refine: int = N_REFINE) -> LatentEstimate:
    """Most likely ``(r, phi)`` for a new frame, by multistart L-BFGS-B.

    Every start on the grid is scored in one batch and the ``n_refine``
    best are optimized; the best final objective wins.
    """
    if model.n == 0:
        raise ValueError("cannot infer a latent from an empty model")
    y = _check_frame(y_new, model)
    pred = model._predictor

    def neg(x):
        v, g = pred.point_objective(x, y)
        return -v, -g

    starts = np.array([(r0, p0) for r0 in r_starts for p0 in phi_starts], dtype=float)
    order = np.argsort(-pred.batch_objective(starts, y), kind="stable")
    best_x, best_v = None, -np.inf
    for x0 in starts[order[:n_refine]]:
        res = minimize(neg, x0, jac=True, method="L-BFGS-B",
                       bounds=[R_BOUNDS, PHI_BOUNDS],
                       options={"maxiter": MAX_ITER, "gtol": GTOL})
        if -res.fun > best_v:
            best_v, best_x = -float(res.fun), res.x
    low = best_v <= pred.prior_objective(y)
    return LatentEstimate(float(best_x[0]), float(best_x[1]), best_v, bool(low))


def augmented_line_objective(model: GplvmModel, r: Sequence[float], frames, phi: float) -> float:
    Xn = np.column_stack([np.asarray(r, dtype=float), np.full(len(r), phi)])
    return model._predictor.line_objective(Xn, np.asarray(frames, dtype=float))


def infer_phi_for_line(taps: Sequence[tuple[float, np.ndarray]], model: GplvmModel,
                       bounds: tuple[float, float] = LINE_PHI_BOUNDS) -> float:
    """Single shared phi for a labelled line, all its ``r`` held fixed.

    A 0.1-wide scan of the bounds picks the basin; a bounded Brent search
    refines inside it.
    """
    if not taps:
        raise ValueError("empty line")
    r = np.array([t[0] for t in taps], dtype=float)
    frames = np.array([_check_frame(t[1], model) for t in taps])

    def neg(phi):
        return -augmented_line_objective(model, r, frames, float(phi))

    grid = np.arange(bounds[0], bounds[1] + 1e-9, 0.1)
    vals = np.array([neg(g) for g in grid])
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-6})
    return float(res.x) if res.fun <= vals[i] else float(grid[i])


def augment_model(model: GplvmModel, labelled_line: Sequence[ModelPoint],
                  reoptimize: bool = True) -> GplvmModel:
    """New model with the line appended, one more line counted, and theta re-fitted."""
    line = tuple(labelled_line)
    for pt in line:
        if pt.output.size != model.dim:
            raise ValueError(f"point output has {pt.output.size} dims, model has {model.dim}")
    grown = replace(model, points=model.points + line, line_count=model.line_count + 1)
    if reoptimize and grown.n >= 2:
        if model.n < 2:
            init = initial_params(grown.Y)
        else:
            init = model.params
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            grown = grown.with_params(optimize_hyperparameters(grown, init))
    return grown


def line_points(r: Sequence[float], frames, phi: float, source_line: str) -> list[ModelPoint]:
    return [ModelPoint(LatentPoint(float(ri), float(phi)), f, source_line)
            for ri, f in zip(r, frames)]
