"""Correlation kernels over the augmented input space (t, x, y).

Two kernel families are provided:

* a squared-exponential kernel on plain inputs, used for the coarsest
  (first) fidelity level, and
* a nonseparable family on the augmented space, coupling the tuning
  parameter t with the inputs x and the lower-fidelity output y through
  an interaction exponent ``beta``.  The coupling factor is always
  evaluated as a power of ``u = 1 / (1 + (t - t')^2 / theta_t)``, which
  stays well defined on the whole box ``beta in [0, 1]``.

All analytic gradients required by the profile likelihood are implemented
here and are validated against finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class KernelKind(Enum):
    SQEXP = "sqexp"
    MATERN15 = "matern15"
    MATERN25 = "matern25"


#: column order of nonseparable hyperparameter gradients, after the d
#: per-input lengthscales: theta_y, theta_t, beta, delta.
GRAD_PARAMS_TAIL = ("theta_y", "theta_t", "beta", "delta")


@dataclass(frozen=True)
class Level1Hyper:
    """Per-dimension lengthscales of the first-level squared-exponential kernel.

    Lengthscales are in squared-input units (they divide squared distances).
    """

    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("lengthscales must be strictly positive and finite")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


@dataclass(frozen=True)
class NonsepHyper:
    """Hyperparameters of the nonseparable augmented-space kernel.

    theta_x divides squared input distances (squared-exponential kind) or
    plain distances (Matern kinds); likewise theta_y for the output
    coordinate and theta_t for the tuning parameter.  ``beta`` in [0, 1]
    controls the tuning/input interaction and ``delta >= 0.5`` the baseline
    decay in t (the lower bound keeps the kernel matrix well conditioned).
    """

    theta_x: np.ndarray
    theta_y: float
    theta_t: float
    beta: float
    delta: float

    def __post_init__(self):
        tx = np.atleast_1d(np.asarray(self.theta_x, dtype=float))
        object.__setattr__(self, "theta_x", tx)
        if not np.all(np.isfinite(tx)) or np.any(tx <= 0):
            raise ValueError("theta_x entries must be strictly positive and finite")
        for name in ("theta_y", "theta_t"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be strictly positive and finite")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.delta < 0.5:
            raise ValueError("delta must be at least 0.5")

    @property
    def dim(self) -> int:
        return self.theta_x.shape[0]


@dataclass(frozen=True)
class AugmentedPoint:
    """A point (t, x, y) of the augmented input space."""

    t: float
    x: np.ndarray
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        if self.t < 0:
            raise ValueError("tuning parameter must be nonnegative")


def _as_arrays(points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalize a list of AugmentedPoint or an (t, X, y) tuple to arrays."""
    if isinstance(points, tuple) and len(points) == 3:
        t, x, y = points
        return (
            np.atleast_1d(np.asarray(t, dtype=float)),
            np.atleast_2d(np.asarray(x, dtype=float)),
            np.atleast_1d(np.asarray(y, dtype=float)),
        )
    pts = list(points)
    if not pts:
        raise ValueError("empty point list")
    t = np.array([p.t for p in pts], dtype=float)
    x = np.vstack([p.x for p in pts])
    y = np.array([p.y for p in pts], dtype=float)
    return t, x, y


# ---------------------------------------------------------------------------
# level-1 squared-exponential kernel
# ---------------------------------------------------------------------------


def k1(x: np.ndarray, x2: np.ndarray, hyper: Level1Hyper) -> float:
    """Squared-exponential correlation prod_j exp(-(x_j - x'_j)^2 / theta_1j)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ValueError("input dimensions disagree")
    return float(np.exp(-np.sum((x - x2) ** 2 / hyper.lengthscales)))


def k1_cross(xa: np.ndarray, xb: np.ndarray, hyper: Level1Hyper) -> np.ndarray:
    """Cross-correlation matrix of shape (len(xa), len(xb))."""
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    d2 = (xa[:, None, :] - xb[None, :, :]) ** 2 / hyper.lengthscales
    return np.exp(-np.sum(d2, axis=2))


def k1_gram(x: np.ndarray, hyper: Level1Hyper) -> np.ndarray:
    return k1_cross(x, x, hyper)


def k1_gram_grads(x: np.ndarray, hyper: Level1Hyper) -> list[np.ndarray]:
    """Partial derivatives of the level-1 Gram matrix w.r.t. each lengthscale."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    gram = k1_gram(x, hyper)
    grads = []
    for j in range(hyper.dim):
        d2 = (x[:, None, j] - x[None, :, j]) ** 2
        grads.append(gram * d2 / hyper.lengthscales[j] ** 2)
    return grads


# ---------------------------------------------------------------------------
# nonseparable augmented-space kernels
# ---------------------------------------------------------------------------

_MATERN_SCALE = {KernelKind.MATERN15: np.sqrt(3.0), KernelKind.MATERN25: np.sqrt(5.0)}


def matern_poly(w: np.ndarray, kind: KernelKind) -> np.ndarray:
    """Polynomial factor of the Matern correlation: psi(w) = poly(w) * exp(-w)."""
    if kind is KernelKind.MATERN15:
        return 1.0 + w
    return 1.0 + w + w * w / 3.0


def _matern_ratio(w: np.ndarray, kind: KernelKind) -> np.ndarray:
    # g(w) = -w * d log psi / d w; the common building block of all gradients
    if kind is KernelKind.MATERN15:
        return w * w / (1.0 + w)
    return w * w * (1.0 + w) / (3.0 + 3.0 * w + w * w)


def _pair_blocks(ta, xa, ya, tb, xb, yb, hyper: NonsepHyper):
    """Pairwise building blocks shared by kernel values and gradients."""
    dt2 = (ta[:, None] - tb[None, :]) ** 2
    dx = xa[:, None, :] - xb[None, :, :]
    dy = ya[:, None] - yb[None, :]
    u = 1.0 / (1.0 + dt2 / hyper.theta_t)
    return dt2, dx, dy, u


def _nonsep_value(dt2, dx, dy, u, hyper: NonsepHyper, kind: KernelKind):
    d = hyper.dim
    expo = 0.5 * hyper.beta * (d + 1) + hyper.delta
    tun = u**expo
    if kind is KernelKind.SQEXP:
        v = dy**2 / hyper.theta_y + np.sum(dx**2 / hyper.theta_x, axis=-1)
        return tun * np.exp(-(u**hyper.beta) * v)
    scale = _MATERN_SCALE[kind]
    c = u ** (0.5 * hyper.beta)
    wy = c * scale * np.abs(dy) / hyper.theta_y
    val = matern_poly(wy, kind) * np.exp(-wy)
    for j in range(d):
        wj = c * scale * np.abs(dx[..., j]) / hyper.theta_x[j]
        val = val * matern_poly(wj, kind) * np.exp(-wj)
    return tun * val


def k_nonsep(p: AugmentedPoint, p2: AugmentedPoint, hyper: NonsepHyper,
             kind: KernelKind = KernelKind.SQEXP) -> float:
    """Nonseparable correlation between two augmented points."""
    if p.x.shape != p2.x.shape or p.x.shape[0] != hyper.dim:
        raise ValueError("input dimensions disagree with hyperparameters")
    blocks = _pair_blocks(*_as_arrays([p]), *_as_arrays([p2]), hyper=hyper)
    return float(_nonsep_value(*blocks, hyper, kind)[0, 0])


def cross(points_a, points_b, hyper: NonsepHyper,
          kind: KernelKind = KernelKind.SQEXP) -> np.ndarray:
    """Cross-correlation matrix between two collections of augmented points."""
    ta, xa, ya = _as_arrays(points_a)
    tb, xb, yb = _as_arrays(points_b)
    blocks = _pair_blocks(ta, xa, ya, tb, xb, yb, hyper=hyper)
    return _nonsep_value(*blocks, hyper, kind)


def gram(points, hyper: NonsepHyper, kind: KernelKind = KernelKind.SQEXP) -> np.ndarray:
    """Correlation matrix of a collection of augmented points (unit diagonal)."""
    t, x, y = _as_arrays(points)
    k = cross((t, x, y), (t, x, y), hyper, kind)
    # exact symmetry and unit diagonal, independent of roundoff
    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, 1.0)
    return k


def gram_with_grads(points, hyper: NonsepHyper, kind: KernelKind):
    """Gram matrix plus its derivatives for every kernel hyperparameter.

    Returns
    -------
    k : (n, n) array
    grads : dict
        Keys ``theta_x_0 .. theta_x_{d-1}``, ``theta_y``, ``theta_t``,
        ``beta``, ``delta``; each an (n, n) array.
    """
    t, x, y = _as_arrays(points)
    d = hyper.dim
    dt2, dx, dy, u = _pair_blocks(t, x, y, t, x, y, hyper)
    expo = 0.5 * hyper.beta * (d + 1) + hyper.delta
    logu = np.log(u)
    grads: dict[str, np.ndarray] = {}

    if kind is KernelKind.SQEXP:
        ub = u**hyper.beta
        v = dy**2 / hyper.theta_y + np.sum(dx**2 / hyper.theta_x, axis=-1)
        k = u**expo * np.exp(-ub * v)
        dk_dv = -ub * k
        dk_du = (expo - hyper.beta * ub * v) * k / u
        for j in range(d):
            grads[f"theta_x_{j}"] = -(dx[..., j] ** 2 / hyper.theta_x[j] ** 2) * dk_dv
        grads["theta_y"] = -(dy**2 / hyper.theta_y**2) * dk_dv
        grads["beta"] = k * logu * (0.5 * (d + 1) - ub * v)
    else:
        scale = _MATERN_SCALE[kind]
        c = u ** (0.5 * hyper.beta)
        w_all = np.empty((d + 1,) + u.shape)
        for j in range(d):
            w_all[j] = c * scale * np.abs(dx[..., j]) / hyper.theta_x[j]
        w_all[d] = c * scale * np.abs(dy) / hyper.theta_y
        k = u**expo
        for w in w_all:
            k = k * matern_poly(w, kind) * np.exp(-w)
        ratios = _matern_ratio(w_all, kind)
        ratio_sum = np.sum(ratios, axis=0)
        for j in range(d):
            grads[f"theta_x_{j}"] = k * ratios[j] / hyper.theta_x[j]
        grads["theta_y"] = k * ratios[d] / hyper.theta_y
        grads["beta"] = k * 0.5 * logu * ((d + 1) - ratio_sum)
        dk_du = k * (expo - 0.5 * hyper.beta * ratio_sum) / u

    grads["theta_t"] = (dt2 / hyper.theta_t**2) * u**2 * dk_du
    grads["delta"] = k * logu

    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, 1.0)
    for g in grads.values():
        np.fill_diagonal(g, 0.0)
    return k, grads


def gram_grad(points, hyper: NonsepHyper, kind: KernelKind, param: str) -> np.ndarray:
    """Elementwise derivative of :func:`gram` with respect to one parameter.

    ``param`` is one of ``theta_x_<j>``, ``theta_y``, ``theta_t``, ``beta``,
    ``delta``.
    """
    _, grads = gram_with_grads(points, hyper, kind)
    if param not in grads:
        raise ValueError(f"unknown parameter {param!r}; have {sorted(grads)}")
    return grads[param]
