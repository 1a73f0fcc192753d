"""Geometric schedules, nested space-filling designs, and benchmark functions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import qmc

from .dataset import FidelityLevel, MultiFidelityData


class DomainViolation(Exception):
    """Input outside a benchmark function's domain."""


@dataclass(frozen=True)
class Schedule:
    """Geometric tuning values t_l = c t_{l-1} and matching sample sizes.

    Sizes follow the geometric rule n_{l-1} = c^{-gamma} n_l evaluated on the
    unrounded chain, rounded half-away-from-zero once at the end; rounding
    inside the recursion would drift (e.g. 17.35 -> 17 but 8 * c^-2 -> 16).
    """

    t: np.ndarray
    n: np.ndarray
    c: float
    gamma: float

    @property
    def n_levels(self) -> int:
        return self.t.size


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def make_schedule(t_max: float, c: float, gamma: float, n_min: int, L: int) -> Schedule:
    """Schedule with t_1 = t_max, t_l = c t_{l-1}, and n_L = n_min."""
    if not 0.0 < c < 1.0:
        raise ValueError("refinement ratio c must lie strictly between 0 and 1")
    if gamma <= 0:
        raise ValueError("size exponent gamma must be positive")
    if n_min < 1:
        raise ValueError("n_min must be at least 1")
    if L < 2:
        raise ValueError("need at least two levels")
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    t = t_max * c ** np.arange(L)
    raw = float(n_min) * c ** (-gamma * np.arange(L - 1, -1, -1))
    n = np.array([_round_half_away(v) for v in raw], dtype=int)
    return Schedule(t=t, n=n, c=c, gamma=gamma)


# ---------------------------------------------------------------------------
# nested space-filling designs
# ---------------------------------------------------------------------------


def _maximin_lhs(n: int, d: int, rng: np.random.Generator, candidates: int = 20) -> np.ndarray:
    """Best-of-several Latin hypercube draw by minimum pairwise distance."""
    best, best_score = None, -np.inf
    for _ in range(candidates):
        sample = qmc.LatinHypercube(d=d, seed=rng).random(n)
        if n == 1:
            return sample
        dist = np.linalg.norm(sample[:, None, :] - sample[None, :, :], axis=2)
        score = np.min(dist[np.triu_indices(n, k=1)])
        if score > best_score:
            best, best_score = sample, score
    return best


def _greedy_maximin_subset(points: np.ndarray, m: int) -> np.ndarray:
    """Indices of a size-m maximin subset, seeded at the most central point."""
    center = np.mean(points, axis=0)
    chosen = [int(np.argmin(np.linalg.norm(points - center, axis=1)))]
    dist_to_chosen = np.linalg.norm(points - points[chosen[0]], axis=1)
    while len(chosen) < m:
        dist_to_chosen[chosen] = -np.inf
        nxt = int(np.argmax(dist_to_chosen))
        chosen.append(nxt)
        dist_to_chosen = np.minimum(
            dist_to_chosen, np.linalg.norm(points - points[nxt], axis=1))
    return np.array(chosen, dtype=int)


def nested_design(n, d: int, domain, seed: int = 0) -> list[np.ndarray]:
    """Nested designs X_L subset ... subset X_1 mapped onto ``domain``.

    The largest level is a maximin Latin-hypercube draw in the unit cube;
    each finer level is a greedy maximin subset of the one above.  Rows are
    ordered so every level's design equals the leading rows of its parent,
    which is exactly the positional alignment the training assembly needs.

    ``domain`` is a sequence of (low, high) pairs per input dimension.
    """
    n = np.asarray(n, dtype=int)
    if np.any(np.diff(n) > 0):
        raise ValueError("sizes must be nonincreasing from level 1 to level L")
    domain = np.asarray(domain, dtype=float).reshape(d, 2)
    rng = np.random.default_rng(seed)
    base = _maximin_lhs(int(n[0]), d, rng)

    index_chain = [np.arange(int(n[0]))]
    for size in n[1:]:
        parent = index_chain[-1]
        sub = _greedy_maximin_subset(base[parent], int(size))
        index_chain.append(parent[sub])

    # reorder so each level starts with the next level's points
    orders = [index_chain[-1]]
    for parent in index_chain[-2::-1]:
        child = orders[0]
        rest = parent[~np.isin(parent, child)]
        orders.insert(0, np.concatenate([child, rest]))

    lo, hi = domain[:, 0], domain[:, 1]
    return [lo + base[order] * (hi - lo) for order in orders]


# ---------------------------------------------------------------------------
# synthetic benchmark functions
# ---------------------------------------------------------------------------


class BenchmarkFn(Enum):
    ADDITIVE = "additive"
    NONADDITIVE = "nonadditive"
    CURRIN = "currin"
    BOREHOLE = "borehole"

    @property
    def dim(self) -> int:
        return {"additive": 1, "nonadditive": 1, "currin": 2, "borehole": 8}[self.value]

    @property
    def domain(self) -> np.ndarray:
        if self is BenchmarkFn.BOREHOLE:
            return np.array([
                [0.05, 0.15], [100.0, 50_000.0], [63_070.0, 115_600.0],
                [990.0, 1110.0], [63.1, 116.0], [700.0, 820.0],
                [1120.0, 1680.0], [9855.0, 12_045.0],
            ])
        return np.array([[0.0, 1.0]] * self.dim)

    @property
    def default_t_max(self) -> float:
        return 2.5

    @property
    def default_levels(self) -> int:
        return 5 if self.dim == 1 else 6

    @property
    def default_n_min(self) -> int:
        return 1 if self.dim == 1 else 2


def eval_benchmark(fn: BenchmarkFn, t: float, x) -> float:
    """Benchmark value at tuning parameter t; t = 0 is the exact limit."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t < 0:
        raise DomainViolation("tuning parameter must be nonnegative")
    dom = fn.domain
    if x.shape[0] != fn.dim:
        raise DomainViolation(f"{fn.value} expects {fn.dim} inputs, got {x.shape[0]}")
    if np.any(x < dom[:, 0] - 1e-12) or np.any(x > dom[:, 1] + 1e-12):
        raise DomainViolation(f"input {x!r} outside the {fn.value} domain")

    if fn is BenchmarkFn.ADDITIVE:
        return float(np.exp(-1.4 * x[0]) * np.cos(3.5 * np.pi * x[0])
                     + t**2 * np.sin(40.0 * x[0]) / 10.0)
    if fn is BenchmarkFn.NONADDITIVE:
        return float(np.sin(10.0 * np.pi * x[0] / (5.0 + t))
                     + 0.2 * np.sin(8.0 * np.pi * x[0]))
    if fn is BenchmarkFn.CURRIN:
        x1, x2 = x
        bracket = np.exp(-4.0 * t) - np.exp(-1.0 / (2.0 * x2))
        ratio = ((2300.0 * x1**3 + 1900.0 * x1**2 + 2092.0 * x1 + 60.0)
                 / (100.0 * x1**3 + 500.0 * x1**2 + 4.0 * x1 + 20.0))
        return float(bracket * ratio)
    rw, r, tu, hu, tl, hl, length, kw = x
    log_ratio = np.log(r / rw)
    numerator = (2.0 * np.pi - t**2) * tu * (hu - hl)
    denominator = log_ratio * (1.0 + t**2
                               + 2.0 * length * tu / (log_ratio * rw**2 * kw)
                               + tu / tl)
    return float(numerator / denominator)


def generate_benchmark_data(fn: BenchmarkFn, schedule: Schedule,
                            seed: int = 0) -> MultiFidelityData:
    """Nested benchmark dataset: seeded design plus exact function evaluations."""
    designs = nested_design(schedule.n, fn.dim, fn.domain, seed)
    levels = []
    for t_l, X_l in zip(schedule.t, designs):
        y_l = np.array([eval_benchmark(fn, t_l, row) for row in X_l])
        levels.append(FidelityLevel(t=float(t_l), X=X_l, y=y_l))
    return MultiFidelityData(levels)
