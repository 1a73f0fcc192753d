"""Bounded multistart quasi-Newton driver shared by all likelihood fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

# objective value used in place of +inf when a factorization fails during a
# line search; L-BFGS-B backtracks away from it
FAILED_OBJECTIVE = 1e25


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of the multistart bounded quasi-Newton search."""

    multistarts: int = 5
    max_iterations: int = 200
    grad_tol: float = 1e-8
    bounds: dict | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.multistarts < 1:
            raise ValueError("multistarts must be at least 1")


@dataclass(frozen=True)
class OptResult:
    x: np.ndarray
    fun: float
    start_index: int
    n_starts: int


def start_points(lo: np.ndarray, hi: np.ndarray, n: int, seed,
                 include_midbox: bool = True) -> np.ndarray:
    """Deterministic start set: optional mid-box point plus a space-filling draw."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    starts = []
    if include_midbox:
        starts.append(0.5 * (lo + hi))
    n_fill = n - len(starts)
    if n_fill > 0:
        sampler = qmc.LatinHypercube(d=lo.size, seed=np.random.default_rng(seed))
        unit = sampler.random(n_fill)
        starts.extend(lo + unit * (hi - lo))
    return np.array(starts[:n])


def multistart_minimize(objective, lo, hi, config: OptimizerConfig, seed,
                        warm_starts=(), include_midbox: bool = True) -> OptResult:
    """Minimize ``objective`` (returning value and gradient) over a box.

    Warm starts are tried first and count toward the tie-breaking order but
    not toward the configured number of multistarts.  The best final
    objective wins; ties break toward the lowest start index.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    starts = [np.clip(np.asarray(w, dtype=float), lo, hi) for w in warm_starts]
    starts.extend(start_points(lo, hi, config.multistarts, seed, include_midbox))

    def guarded(z):
        val, grad = objective(z)
        if not np.isfinite(val):
            return FAILED_OBJECTIVE, np.zeros_like(z)
        return val, grad

    best: OptResult | None = None
    for idx, z0 in enumerate(starts):
        res = minimize(
            guarded, z0, jac=True, method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": config.max_iterations, "gtol": config.grad_tol},
        )
        candidate = OptResult(x=np.asarray(res.x), fun=float(res.fun),
                              start_index=idx, n_starts=len(starts))
        if best is None or candidate.fun < best.fun:
            best = candidate
    assert best is not None
    return best
