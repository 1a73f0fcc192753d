"""RMSE and Gaussian CRPS scoring of predictions against reference values."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class ScoreReport:
    rmse: float
    mean_crps: float
    n_points: int
    residuals: np.ndarray | None = None


def rmse(predictions, truths) -> float:
    """Root-mean-square error of a vector of point predictions."""
    predictions = np.atleast_1d(np.asarray(predictions, dtype=float))
    truths = np.atleast_1d(np.asarray(truths, dtype=float))
    if predictions.shape != truths.shape or predictions.size == 0:
        raise ValueError("predictions and truths must match in length (>= 1)")
    return float(np.sqrt(np.mean((predictions - truths) ** 2)))


def crps_gaussian(mean, variance, y) -> float:
    """CRPS of a Gaussian forecast N(mean, variance) against observation y.

    Uses the closed form sigma * [z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)]
    with z the standardized residual; the moment-matched posterior here is
    Gaussian, so the closed form scores the full predictive distribution.
    The degenerate sigma = 0 limit is the absolute error.
    """
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    sigma = np.sqrt(variance)
    if sigma == 0.0:
        return float(abs(y - mean))
    z = (y - mean) / sigma
    return float(sigma * (z * (2.0 * norm.cdf(z) - 1.0)
                          + 2.0 * norm.pdf(z) - 1.0 / np.sqrt(np.pi)))


def score(means, variances, truths, keep_residuals: bool = False) -> ScoreReport:
    """Bundle RMSE and mean CRPS over a test set."""
    means = np.atleast_1d(np.asarray(means, dtype=float))
    variances = np.atleast_1d(np.asarray(variances, dtype=float))
    truths = np.atleast_1d(np.asarray(truths, dtype=float))
    crps_vals = [crps_gaussian(m, v, y) for m, v, y in zip(means, variances, truths)]
    return ScoreReport(
        rmse=rmse(means, truths),
        mean_crps=float(np.mean(crps_vals)),
        n_points=means.size,
        residuals=(means - truths) if keep_residuals else None,
    )


def write_scores_csv(path: str, rows) -> None:
    """Score CSV with columns method, seed, rmse, crps."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "seed", "rmse", "crps"])
        for method, seed, rmse_val, crps_val in rows:
            writer.writerow([method, seed, repr(float(rmse_val)), repr(float(crps_val))])
