"""Monte Carlo posterior propagation: the independent check on the closed forms.

Samples are pushed level by level through the plain conditional-GP
posterior, so no part of the closed-form recursion is reused beyond the
shared conditional moments it integrates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fit import Emulator
from .level1 import predict_level1
from .predict import _classify_target, conditional_moments

_CHUNK = 200_000


@dataclass(frozen=True)
class McConfig:
    """Sampling budget and bookkeeping for the Monte Carlo oracle."""

    n_samples: int = 1_000_000
    seed: int = 0
    keep_levels: bool = False

    def __post_init__(self):
        if self.n_samples < 1_000:
            raise ValueError("use at least 1000 samples")


@dataclass(frozen=True)
class McResult:
    mean: float
    variance: float
    stderr_mean: float
    stderr_variance: float
    levels: tuple | None = None


def mc_propagate(model: Emulator, x, t_target: float, cfg: McConfig) -> McResult:
    """Sample-based posterior moments at (x, t_target) with standard errors.

    Draws the level-1 posterior, then pushes each sample through the
    conditional normals of the higher levels, ending at ``t_target``.  The
    variance standard error uses the delta method with the fourth central
    moment.  Deterministic for a fixed seed.
    """
    level_idx = _classify_target(model, t_target)
    x = np.asarray(x, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    ts = model.t_values
    steps = list(ts[1: (level_idx + 1) if level_idx is not None else len(ts)])
    if level_idx is None:
        steps.append(t_target)

    mu1, var1 = predict_level1(model.level1, x)
    n = cfg.n_samples
    samples = np.empty(n)
    level_store = [np.empty(n) for _ in steps] if cfg.keep_levels else None
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        size = stop - start
        current = mu1 + np.sqrt(var1) * rng.standard_normal(size)
        for step_idx, t_step in enumerate(steps):
            mean_c, var_c = conditional_moments(model, x, t_step, current)
            current = mean_c + np.sqrt(var_c) * rng.standard_normal(size)
            if level_store is not None:
                level_store[step_idx][start:stop] = current
        samples[start:stop] = current

    mean = float(np.mean(samples))
    centered = samples - mean
    m2 = float(np.mean(centered**2))
    m4 = float(np.mean(centered**4))
    variance = m2 * n / (n - 1)
    stderr_mean = np.sqrt(m2 / n)
    stderr_variance = np.sqrt(max(m4 - m2**2, 0.0) / n)
    return McResult(mean=mean, variance=variance, stderr_mean=float(stderr_mean),
                    stderr_variance=float(stderr_variance),
                    levels=tuple(level_store) if level_store is not None else None)
