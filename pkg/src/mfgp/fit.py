"""Maximum-likelihood fitting of the augmented-space GP over levels 2..L."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import dataset, linalg
from .kernels import GRAD_PARAMS_TAIL, KernelKind, NonsepHyper, gram, gram_with_grads
from .level1 import DegenerateData, Level1Model, fit_level1, mean_scale_mle
from .optimize import OptimizerConfig, multistart_minimize

BETA_BOUNDS = (0.0, 1.0)
DELTA_BOUNDS = (0.5, 5.0)


@dataclass(frozen=True)
class Emulator:
    """Fitted multi-fidelity emulator.

    Holds the level-1 GP, the augmented-space GP (mean ``alpha``, scale
    ``tau2``, kernel hyperparameters), and the cached training assembly with
    its factorization: ``weights = K^{-1}(y - alpha 1)`` and the explicit
    inverse ``kinv`` needed by the posterior variance recursion.
    """

    level1: Level1Model
    alpha: float
    tau2: float
    hyper: NonsepHyper
    kind: KernelKind
    data: dataset.MultiFidelityData
    assembly: dataset.TrainingAssembly
    factor: linalg.SpdFactor
    weights: np.ndarray
    kinv: np.ndarray

    @property
    def t_values(self) -> np.ndarray:
        return self.data.t_values

    @property
    def dim(self) -> int:
        return self.data.d


def mle_mean_scale(assembly, factor: linalg.SpdFactor) -> tuple[float, float]:
    """Closed-form GLS mean and profiled scale for the augmented GP.

    Accepts a :class:`~mfgp.dataset.TrainingAssembly` or a plain response
    vector.  The mean is ``1'K^-1 y / 1'K^-1 1``; the symmetric form printed
    with ``y'K^-1 y`` in the numerator is dimensionally inconsistent with
    the scale estimator and is not used.
    """
    y = assembly.y if isinstance(assembly, dataset.TrainingAssembly) else assembly
    return mean_scale_mle(y, factor)


def hyper_to_vector(hyper: NonsepHyper) -> np.ndarray:
    """Optimizer coordinates: log lengthscales, raw beta and delta."""
    return np.concatenate([
        np.log(hyper.theta_x), [np.log(hyper.theta_y), np.log(hyper.theta_t),
                                hyper.beta, hyper.delta],
    ])


def vector_to_hyper(z: np.ndarray, d: int) -> NonsepHyper:
    return NonsepHyper(theta_x=np.exp(z[:d]), theta_y=float(np.exp(z[d])),
                       theta_t=float(np.exp(z[d + 1])), beta=float(z[d + 2]),
                       delta=float(z[d + 3]))


def profile_neg_loglik(hyper: NonsepHyper, assembly: dataset.TrainingAssembly,
                       kind: KernelKind) -> tuple[float, np.ndarray]:
    """Negative profile log-likelihood of the augmented GP and its gradient.

    The value is ``0.5 log det K + (N/2) log Q`` where Q is the GLS quadratic
    form; minimizing it maximizes the profile log-likelihood.  The gradient
    (raw-parameter space, ordered theta_x, theta_y, theta_t, beta, delta)
    combines the trace term with the envelope derivative of Q, so no
    derivative through the profiled mean is needed.

    A failed factorization yields ``(inf, 0)`` so optimizers backtrack;
    responses identical to the GLS mean raise :class:`DegenerateData`.
    """
    n = assembly.n
    try:
        k, grads = gram_with_grads(assembly.points, hyper, kind)
        factor = linalg.factor_spd(k)
    except linalg.NotPositiveDefinite:
        return np.inf, np.zeros(hyper.dim + 4)
    alpha, tau2 = mean_scale_mle(assembly.y, factor)
    quad = tau2 * n
    if quad <= 0 or not np.isfinite(quad):
        raise DegenerateData("responses coincide with the GLS mean")
    value = 0.5 * linalg.log_det(factor) + 0.5 * n * np.log(quad)
    r = linalg.solve(factor, assembly.y - alpha)
    kinv = linalg.solve(factor, np.eye(n))
    names = [f"theta_x_{j}" for j in range(hyper.dim)] + list(GRAD_PARAMS_TAIL)
    grad = np.empty(len(names))
    for i, name in enumerate(names):
        dk = grads[name]
        grad[i] = 0.5 * np.sum(kinv * dk) - 0.5 * n * (r @ dk @ r) / quad
    return value, grad


def _hyper_box(assembly: dataset.TrainingAssembly,
               overrides: dict | None) -> tuple[np.ndarray, np.ndarray]:
    """Optimizer box: log-lengthscale bounds from data ranges, raw beta/delta."""
    overrides = overrides or {}

    def span(values):
        s = float(np.ptp(values))
        return s if s > 0 else 1.0

    spans = [span(assembly.X[:, j]) for j in range(assembly.X.shape[1])]
    spans.append(span(assembly.y_prev))
    # with two levels all stacked tuning values coincide; fall back to the
    # finest tuning value as the natural extrapolation scale
    t_span = float(np.ptp(assembly.t))
    spans.append(t_span if t_span > 0 else float(np.min(assembly.t)))

    lo, hi = [], []
    names = [f"theta_x_{j}" for j in range(assembly.X.shape[1])] + ["theta_y", "theta_t"]
    for name, s in zip(names, spans):
        pair = overrides.get(name, (1e-2 * s**2, 1e2 * s**2))
        lo.append(np.log(pair[0]))
        hi.append(np.log(pair[1]))
    for name, default in (("beta", BETA_BOUNDS), ("delta", DELTA_BOUNDS)):
        pair = overrides.get(name, default)
        lo.append(pair[0])
        hi.append(pair[1])
    return np.array(lo), np.array(hi)


def build_emulator(data: dataset.MultiFidelityData, kind: KernelKind,
                   hyper: NonsepHyper, level1: Level1Model,
                   alpha: float | None = None,
                   tau2: float | None = None) -> Emulator:
    """Assemble an emulator from explicit parameters, rebuilding all caches.

    When ``alpha``/``tau2`` are omitted they are set to their closed-form
    maximum-likelihood values for the given kernel hyperparameters.
    """
    assembly = dataset.assemble(data)
    factor = linalg.factor_spd(gram(assembly.points, hyper, kind))
    if alpha is None or tau2 is None:
        alpha, tau2 = mle_mean_scale(assembly, factor)
    if tau2 <= 0 or not np.isfinite(tau2):
        raise DegenerateData("profiled scale is not positive")
    weights = linalg.solve(factor, assembly.y - alpha)
    kinv = linalg.solve(factor, np.eye(assembly.n))
    return Emulator(level1=level1, alpha=alpha, tau2=tau2, hyper=hyper, kind=kind,
                    data=data, assembly=assembly, factor=factor, weights=weights,
                    kinv=kinv)


def fit(data: dataset.MultiFidelityData, kind: KernelKind = KernelKind.SQEXP,
        opt: OptimizerConfig | None = None, seed: int = 0,
        warm_start: NonsepHyper | None = None) -> Emulator:
    """Maximum-likelihood fit of the full multi-fidelity emulator.

    The level-1 GP is fitted first; the augmented-space hyperparameters are
    then taken from the best of ``opt.multistarts`` bounded L-BFGS-B runs
    (mid-box start plus seeded space-filling starts, with ``warm_start``
    tried first when given).  Deterministic for a fixed seed.
    """
    opt = opt or OptimizerConfig()
    if seed is None:
        seed = opt.seed if opt.seed is not None else 0
    assembly = dataset.assemble(data)
    level1 = fit_level1(data.levels[0].X, data.levels[0].y, opt, seed)
    d = data.d
    lo, hi = _hyper_box(assembly, opt.bounds)

    def objective(z):
        hyper = vector_to_hyper(z, d)
        value, grad = profile_neg_loglik(hyper, assembly, kind)
        if not np.isfinite(value):
            return np.inf, np.zeros_like(z)
        scale = np.concatenate([np.exp(z[: d + 2]), [1.0, 1.0]])
        return value, grad * scale

    warm = [hyper_to_vector(warm_start)] if warm_start is not None else []
    best = multistart_minimize(objective, lo, hi, opt, seed, warm_starts=warm)
    hyper = vector_to_hyper(best.x, d)
    return build_emulator(data, kind, hyper, level1)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_CHECKSUM_RTOL = 1e-6


def _objective_checksum(model: Emulator) -> float:
    """Profile objective evaluated with the stored mean; load-time integrity check."""
    resid = model.assembly.y - model.alpha
    quad = float(resid @ linalg.solve(model.factor, resid))
    return 0.5 * linalg.log_det(model.factor) + 0.5 * model.assembly.n * np.log(quad)


def model_to_doc(model: Emulator) -> dict:
    return {
        "kind": model.kind.value,
        "alpha": model.alpha,
        "tau2": model.tau2,
        "hyper": {
            "theta_x": model.hyper.theta_x.tolist(),
            "theta_y": model.hyper.theta_y,
            "theta_t": model.hyper.theta_t,
            "beta": model.hyper.beta,
            "delta": model.hyper.delta,
        },
        "level1": {
            "alpha": model.level1.alpha,
            "tau2": model.level1.tau2,
            "lengthscales": model.level1.hyper.lengthscales.tolist(),
            "degenerate": model.level1.degenerate,
        },
        "data": dataset.to_manifest(model.data),
        "objective": _objective_checksum(model),
    }


def model_from_doc(doc: dict) -> Emulator:
    from .kernels import Level1Hyper
    from .level1 import Level1Model
    from .kernels import k1_gram

    data = dataset.from_manifest(doc["data"])
    l1 = doc["level1"]
    l1_hyper = Level1Hyper(np.array(l1["lengthscales"], dtype=float))
    X1, y1 = data.levels[0].X, data.levels[0].y
    factor1 = linalg.factor_spd(k1_gram(X1, l1_hyper))
    weights1 = (linalg.solve(factor1, y1 - l1["alpha"])
                if not l1["degenerate"] else np.zeros_like(y1))
    level1 = Level1Model(alpha=l1["alpha"], tau2=l1["tau2"], hyper=l1_hyper,
                         X=X1, y=y1, factor=factor1, weights=weights1,
                         degenerate=l1["degenerate"])
    h = doc["hyper"]
    hyper = NonsepHyper(theta_x=np.array(h["theta_x"], dtype=float),
                        theta_y=h["theta_y"], theta_t=h["theta_t"],
                        beta=h["beta"], delta=h["delta"])
    model = build_emulator(data, KernelKind(doc["kind"]), hyper, level1,
                           alpha=doc["alpha"], tau2=doc["tau2"])
    stored = doc["objective"]
    fresh = _objective_checksum(model)
    if abs(fresh - stored) > _CHECKSUM_RTOL * max(1.0, abs(stored)):
        raise ValueError(
            f"model checksum mismatch (stored {stored!r}, recomputed {fresh!r})")
    return model


def save_model(model: Emulator, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_doc(model), fh, indent=1)
        fh.write("\n")


def load_model(path: str) -> Emulator:
    with open(path) as fh:
        return model_from_doc(json.load(fh))


def with_parameters(model: Emulator, **updates) -> Emulator:
    """Convenience for tests: replace fields without recomputing caches."""
    return replace(model, **updates)
