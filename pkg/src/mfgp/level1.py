"""Fit and predict the Gaussian process for the coarsest fidelity level."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import linalg
from .kernels import Level1Hyper, k1_cross, k1_gram, k1_gram_grads
from .optimize import OptimizerConfig, multistart_minimize

# relative variance below which a negative posterior variance is treated as
# roundoff and clamped; anything worse is reported
VARIANCE_SLACK = 1e-6


class DegenerateData(Exception):
    """Raised when outputs carry no signal (zero profiled scale)."""


@dataclass(frozen=True)
class Level1Model:
    """Fitted first-level GP with cached factorization."""

    alpha: float
    tau2: float
    hyper: Level1Hyper
    X: np.ndarray
    y: np.ndarray
    factor: linalg.SpdFactor
    weights: np.ndarray  # K^{-1} (y - alpha 1)
    degenerate: bool = False

    @property
    def n(self) -> int:
        return self.X.shape[0]


def mean_scale_mle(y: np.ndarray, factor: linalg.SpdFactor) -> tuple[float, float]:
    """Closed-form generalized-least-squares mean and profiled scale.

    alpha = 1' K^-1 y / 1' K^-1 1 and tau2 = (y - alpha 1)' K^-1 (y - alpha 1) / n.
    """
    y = np.asarray(y, dtype=float)
    ones = np.ones_like(y)
    kinv_y = linalg.solve(factor, y)
    kinv_1 = linalg.solve(factor, ones)
    alpha = float(ones @ kinv_y) / float(ones @ kinv_1)
    resid = y - alpha
    tau2 = float(resid @ linalg.solve(factor, resid)) / y.size
    return alpha, tau2


def profile_neg_loglik_level1(hyper: Level1Hyper, X: np.ndarray,
                              y: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative profile log-likelihood of the level-1 GP and its gradient.

    The value is ``0.5 log det K + (n/2) log Q`` with the GLS mean plugged
    into the quadratic form Q; the gradient is with respect to the raw
    lengthscales.
    """
    n = y.size
    gram = k1_gram(X, hyper)
    factor = linalg.factor_spd(gram)
    alpha, tau2 = mean_scale_mle(y, factor)
    quad = tau2 * n
    if quad <= 0 or not np.isfinite(quad):
        raise DegenerateData("outputs are constant under the GLS mean")
    value = 0.5 * linalg.log_det(factor) + 0.5 * n * np.log(quad)
    resid = y - alpha
    r = linalg.solve(factor, resid)
    kinv = linalg.solve(factor, np.eye(n))
    grad = np.empty(hyper.dim)
    for j, dk in enumerate(k1_gram_grads(X, hyper)):
        grad[j] = 0.5 * np.sum(kinv * dk) - 0.5 * n * (r @ dk @ r) / quad
    return value, grad


def _log_bounds_from_ranges(spans: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    spans = np.where(spans > 0, spans, 1.0)
    return np.log(1e-2 * spans**2), np.log(1e2 * spans**2)


def fit_level1(X: np.ndarray, y: np.ndarray, opt: OptimizerConfig | None = None,
               seed: int = 0) -> Level1Model:
    """Maximum-likelihood fit of the level-1 GP.

    Lengthscales are optimized in log-space over a data-driven box with
    seeded space-filling multistarts.  Constant outputs short-circuit to a
    degenerate constant-mean model carrying a warning flag.
    """
    opt = opt or OptimizerConfig()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if X.shape[0] != y.size:
        raise ValueError("design and outputs disagree in length")
    if X.shape[0] < 2:
        raise ValueError("need at least two points to fit a GP")
    if seed is None:
        seed = opt.seed if opt.seed is not None else 0
    lo, hi = _log_bounds_from_ranges(np.ptp(X, axis=0))

    if np.ptp(y) == 0.0:
        warnings.warn("constant level-1 outputs; returning a degenerate model")
        hyper = Level1Hyper(np.exp(0.5 * (lo + hi)))
        factor = linalg.factor_spd(k1_gram(X, hyper))
        return Level1Model(alpha=float(y[0]), tau2=0.0, hyper=hyper, X=X, y=y,
                           factor=factor, weights=np.zeros_like(y), degenerate=True)

    def objective(z):
        hyper = Level1Hyper(np.exp(z))
        try:
            value, grad = profile_neg_loglik_level1(hyper, X, y)
        except linalg.NotPositiveDefinite:
            return np.inf, np.zeros_like(z)
        return value, grad * np.exp(z)

    best = multistart_minimize(objective, lo, hi, opt, seed, include_midbox=False)
    hyper = Level1Hyper(np.exp(best.x))
    factor = linalg.factor_spd(k1_gram(X, hyper))
    alpha, tau2 = mean_scale_mle(y, factor)
    weights = linalg.solve(factor, y - alpha)
    return Level1Model(alpha=alpha, tau2=tau2, hyper=hyper, X=X, y=y,
                       factor=factor, weights=weights)


def predict_level1(model: Level1Model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at one point or a batch of points.

    Variances are clamped at zero; a value below ``-1e-6 * tau2`` before the
    clamp indicates a real inconsistency and triggers a warning.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    kvec = k1_cross(np.atleast_2d(x), model.X, model.hyper)
    mean = model.alpha + kvec @ model.weights
    kinv_k = linalg.solve(model.factor, kvec.T)
    var = model.tau2 * (1.0 - np.sum(kvec * kinv_k.T, axis=1))
    if np.any(var < -VARIANCE_SLACK * max(model.tau2, np.finfo(float).tiny)):
        warnings.warn("posterior variance fell below the roundoff floor")
    var = np.maximum(var, 0.0)
    if single:
        return float(mean[0]), float(var[0])
    return mean, var
