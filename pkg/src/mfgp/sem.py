"""Stochastic EM fitting and prediction for non-nested designs.

Non-nested designs are completed into a nested chain by pseudo inputs:
``X*_L = X_L`` and ``X*_l = X_l union X*_{l+1}``.  Pseudo outputs at those
inputs are imputed by alternating a stochastic imputation step (exact GP
conditionals at the current parameters) with a maximization step (the
nested-data likelihood fit on the pseudo-complete data).  Final parameters
average the post-burn-in chain; prediction mixes the closed-form posterior
over fresh imputations.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import dataset, linalg
from .dataset import NESTED_TOL, FidelityLevel, MultiFidelityData
from .fit import Emulator, OptimizerConfig, build_emulator, fit, profile_neg_loglik
from .kernels import KernelKind, Level1Hyper, NonsepHyper, gram, k1_cross, k1_gram
from .level1 import Level1Model, fit_level1, predict_level1
from .predict import Prediction, predict_batch

DEFAULT_ITERATIONS = 100
DEFAULT_PREDICT_DRAWS = 50


@dataclass(frozen=True)
class SemParams:
    """One link of the SEM parameter chain."""

    alpha1: float
    tau2_1: float
    theta1: np.ndarray
    alpha: float
    tau2: float
    hyper: NonsepHyper


@dataclass(frozen=True)
class PseudoLevel:
    """A level of the completed design with observed/pseudo bookkeeping.

    ``obs_index`` maps observed rows of ``X_star`` into the original output
    vector; ``pseudo_index`` numbers the pseudo rows consecutively.
    """

    t: float
    X_star: np.ndarray
    observed: np.ndarray
    obs_index: np.ndarray
    pseudo_index: np.ndarray

    @property
    def X_pseudo(self) -> np.ndarray:
        return self.X_star[~self.observed]

    @property
    def n_pseudo(self) -> int:
        return int(np.sum(~self.observed))


@dataclass
class SemState:
    """Pseudo-design bookkeeping plus the SEM parameter chain."""

    data: MultiFidelityData
    kind: KernelKind
    plevels: list[PseudoLevel]
    pseudo_y: list[np.ndarray]
    chain: list[SemParams] = field(default_factory=list)
    chain_loglik: list[float] = field(default_factory=list)
    iterations: int = 0
    init_model: Emulator | None = None

    @property
    def burn_in(self) -> int:
        return math.ceil(0.75 * self.iterations)

    @property
    def n_pseudo_total(self) -> int:
        return sum(pl.n_pseudo for pl in self.plevels)


def _match_row(X: np.ndarray, row: np.ndarray, tol: float) -> int | None:
    hits = np.nonzero(np.all(np.abs(X - row) <= tol, axis=1))[0]
    return int(hits[0]) if hits.size else None


def build_pseudo_design(data: MultiFidelityData,
                        tol: float = NESTED_TOL) -> list[PseudoLevel]:
    """Complete the design chain so that nestedness holds by construction.

    Each level's combined design starts with the (already nested) finer
    chain and appends the level's remaining points; points shared between
    consecutive levels are deduplicated with a warning, since the imputation
    scheme assumes disjoint designs.
    """
    levels = data.levels
    out: list[PseudoLevel] = []
    child: np.ndarray | None = None
    overlap = 0
    for lv in reversed(levels):
        if child is None:
            x_star = lv.X.copy()
            observed = np.ones(lv.n, dtype=bool)
            obs_index = np.arange(lv.n)
        else:
            matches = [_match_row(lv.X, row, tol) for row in child]
            overlap += sum(m is not None for m in matches)
            matched = {m for m in matches if m is not None}
            rest = [i for i in range(lv.n) if i not in matched]
            x_star = np.vstack([child, lv.X[rest]]) if rest else child.copy()
            observed = np.array([m is not None for m in matches]
                                + [True] * len(rest))
            obs_index = np.array([(-1 if m is None else m) for m in matches]
                                 + rest, dtype=int)
        pseudo_index = np.full(x_star.shape[0], -1, dtype=int)
        pseudo_index[~observed] = np.arange(int(np.sum(~observed)))
        out.insert(0, PseudoLevel(t=lv.t, X_star=x_star, observed=observed,
                                  obs_index=obs_index, pseudo_index=pseudo_index))
        child = x_star
    if overlap:
        warnings.warn(f"deduplicated {overlap} design points shared between "
                      "consecutive levels; the imputation scheme assumes "
                      "disjoint designs")
    return out


def combined_outputs(state: SemState) -> list[np.ndarray]:
    """Per-level pseudo-complete output vectors at the current imputations."""
    out = []
    for lv, pl, ytilde in zip(state.data.levels, state.plevels, state.pseudo_y):
        y_star = np.empty(pl.X_star.shape[0])
        y_star[pl.observed] = lv.y[pl.obs_index[pl.observed]]
        if pl.n_pseudo:
            y_star[~pl.observed] = ytilde
        out.append(y_star)
    return out


def pseudo_complete_data(state: SemState) -> MultiFidelityData:
    ys = combined_outputs(state)
    return MultiFidelityData([
        FidelityLevel(t=pl.t, X=pl.X_star, y=y) for pl, y in zip(state.plevels, ys)
    ])


def _params_of(model: Emulator) -> SemParams:
    return SemParams(alpha1=model.level1.alpha, tau2_1=model.level1.tau2,
                     theta1=model.level1.hyper.lengthscales.copy(),
                     alpha=model.alpha, tau2=model.tau2, hyper=model.hyper)


def _child_seed(seed_seq: np.random.SeedSequence) -> int:
    return int(seed_seq.generate_state(1)[0])


def _profile_loglik(state: SemState, params: SemParams) -> float:
    assembly = dataset.assemble(pseudo_complete_data(state))
    value, _ = profile_neg_loglik(params.hyper, assembly, state.kind)
    return -value


def sem_init(data: MultiFidelityData, kind: KernelKind = KernelKind.SQEXP,
             opt: OptimizerConfig | None = None,
             seed: int = 0) -> tuple[SemState, SemParams]:
    """Initial pseudo outputs from independent per-level GPs, then a full fit."""
    opt = opt or OptimizerConfig()
    plevels = build_pseudo_design(data)
    init_seeds = np.random.SeedSequence(seed).spawn(len(plevels))
    pseudo_y = []
    for lv, pl, ss in zip(data.levels, plevels, init_seeds):
        if pl.n_pseudo == 0:
            pseudo_y.append(np.empty(0))
        elif lv.n < 2:
            pseudo_y.append(np.full(pl.n_pseudo, float(np.mean(lv.y))))
        else:
            g = fit_level1(lv.X, lv.y, opt, _child_seed(ss))
            mean, _ = predict_level1(g, pl.X_pseudo)
            pseudo_y.append(np.atleast_1d(mean))
    state = SemState(data=data, kind=kind, plevels=plevels, pseudo_y=pseudo_y)
    model0 = fit(pseudo_complete_data(state), kind, opt, seed)
    params0 = _params_of(model0)
    state.chain.append(params0)
    state.chain_loglik.append(_profile_loglik(state, params0))
    state.init_model = model0
    return state, params0


def _sample_mvn(mean: np.ndarray, cov: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    """Draw from N(mean, cov); singular covariances collapse to their range."""
    z = rng.standard_normal(mean.size)
    try:
        factor = linalg.factor_spd(cov)
        return mean + factor.lower @ z
    except linalg.NotPositiveDefinite:
        eigval, eigvec = np.linalg.eigh(0.5 * (cov + cov.T))
        root = eigvec * np.sqrt(np.maximum(eigval, 0.0))
        return mean + root @ z


def e_step(state: SemState, params: SemParams,
           rng: np.random.Generator) -> list[np.ndarray]:
    """Impute pseudo outputs at fixed parameters.

    Level-1 pseudo outputs are drawn from the level-1 GP posterior given the
    observed level-1 data.  Pseudo responses at levels 2..L-1 are drawn
    jointly from their conditional normal given the observed responses, with
    the kernel's y-coordinates frozen at the previous imputations.
    """
    data = state.data
    new_pseudo = [arr.copy() for arr in state.pseudo_y]

    # snapshot of the previous pseudo-complete assembly (kernel coordinates)
    assembly = dataset.assemble(pseudo_complete_data(state))
    resp_observed = np.concatenate([pl.observed for pl in state.plevels[1:]])

    pl1 = state.plevels[0]
    if pl1.n_pseudo:
        lv1 = data.levels[0]
        hyper1 = Level1Hyper(params.theta1)
        factor1 = linalg.factor_spd(k1_gram(lv1.X, hyper1))
        kvec = k1_cross(pl1.X_pseudo, lv1.X, hyper1)
        mean = params.alpha1 + kvec @ linalg.solve(factor1, lv1.y - params.alpha1)
        cov = params.tau2_1 * (k1_gram(pl1.X_pseudo, hyper1)
                               - kvec @ linalg.solve(factor1, kvec.T))
        new_pseudo[0] = _sample_mvn(mean, cov, rng)

    pseudo_idx = np.nonzero(~resp_observed)[0]
    if pseudo_idx.size:
        obs_idx = np.nonzero(resp_observed)[0]
        k_all = gram(assembly.points, params.hyper, state.kind)
        a_mat = k_all[np.ix_(pseudo_idx, pseudo_idx)]
        b_mat = k_all[np.ix_(pseudo_idx, obs_idx)]
        c_factor = linalg.factor_spd(k_all[np.ix_(obs_idx, obs_idx)])
        resid = assembly.y[obs_idx] - params.alpha
        mean = params.alpha + b_mat @ linalg.solve(c_factor, resid)
        cov = params.tau2 * (a_mat - b_mat @ linalg.solve(c_factor, b_mat.T))
        draw = _sample_mvn(mean, cov, rng)
        offset = 0
        for level_pos, pl in enumerate(state.plevels[1:], start=1):
            if pl.n_pseudo:
                new_pseudo[level_pos] = draw[offset: offset + pl.n_pseudo]
                offset += pl.n_pseudo
    return new_pseudo


def m_step(state: SemState, prev: SemParams, opt: OptimizerConfig,
           seed: int) -> tuple[SemParams, float]:
    """Refit the nested-data likelihood on the pseudo-complete data.

    Warm-started from the previous parameters on top of the usual multistart
    protocol, so the objective never worsens against the previous estimate
    on the same data.
    """
    model = fit(pseudo_complete_data(state), state.kind, opt, seed,
                warm_start=prev.hyper)
    params = _params_of(model)
    return params, _profile_loglik(state, params)


def _average(values, log_scale: bool):
    arr = np.asarray(values, dtype=float)
    if np.all(arr == arr[0]):
        return arr[0]
    return np.exp(np.mean(np.log(arr), axis=0)) if log_scale else np.mean(arr, axis=0)


def average_params(chain: list[SemParams]) -> SemParams:
    """Post-burn-in chain average.

    Positive-scale parameters (lengthscales and scales) are averaged in
    log-space so the average stays positive; means and the bounded beta and
    delta are averaged in raw space.  A constant chain passes through
    unchanged.
    """
    hyper = NonsepHyper(
        theta_x=_average([p.hyper.theta_x for p in chain], log_scale=True),
        theta_y=float(_average([p.hyper.theta_y for p in chain], log_scale=True)),
        theta_t=float(_average([p.hyper.theta_t for p in chain], log_scale=True)),
        beta=float(_average([p.hyper.beta for p in chain], log_scale=False)),
        delta=float(_average([p.hyper.delta for p in chain], log_scale=False)),
    )
    return SemParams(
        alpha1=float(_average([p.alpha1 for p in chain], log_scale=False)),
        tau2_1=float(_average([p.tau2_1 for p in chain], log_scale=True)),
        theta1=_average([p.theta1 for p in chain], log_scale=True),
        alpha=float(_average([p.alpha for p in chain], log_scale=False)),
        tau2=float(_average([p.tau2 for p in chain], log_scale=True)),
        hyper=hyper,
    )


def _emulator_at(state: SemState, params: SemParams) -> Emulator:
    """Emulator with the given parameters and the state's current imputations."""
    data_star = pseudo_complete_data(state)
    lv1 = data_star.levels[0]
    hyper1 = Level1Hyper(params.theta1)
    factor1 = linalg.factor_spd(k1_gram(lv1.X, hyper1))
    weights1 = linalg.solve(factor1, lv1.y - params.alpha1)
    level1 = Level1Model(alpha=params.alpha1, tau2=params.tau2_1, hyper=hyper1,
                         X=lv1.X, y=lv1.y, factor=factor1, weights=weights1)
    return build_emulator(data_star, state.kind, params.hyper, level1,
                          alpha=params.alpha, tau2=params.tau2)


def sem_fit(data: MultiFidelityData, kind: KernelKind = KernelKind.SQEXP,
            iterations: int = DEFAULT_ITERATIONS, seed: int = 0,
            opt: OptimizerConfig | None = None,
            m_step_opt: OptimizerConfig | None = None) -> tuple[Emulator, SemState]:
    """Stochastic-EM fit; returns the chain-averaged model and the chain state.

    The maximization steps are warm-started from the previous parameters and
    by default run a reduced multistart (the chain supplies continuity); the
    initial fit uses the full protocol in ``opt``.  On data that is already
    nested the pseudo sets are empty and the iterations provably leave the
    pseudo-complete data unchanged, so the chain is filled with the initial
    fit and the averaged model is exactly the plain nested fit.
    """
    if iterations < 4:
        raise ValueError("need at least 4 SEM iterations")
    opt = opt or OptimizerConfig()
    if m_step_opt is None:
        m_step_opt = OptimizerConfig(multistarts=min(opt.multistarts, 2),
                                     max_iterations=opt.max_iterations,
                                     grad_tol=opt.grad_tol, bounds=opt.bounds,
                                     seed=opt.seed)
    state, params = sem_init(data, kind, opt, seed)
    state.iterations = iterations
    if state.n_pseudo_total == 0:
        state.chain.extend([params] * iterations)
        state.chain_loglik.extend([state.chain_loglik[0]] * iterations)
        return state.init_model, state
    estep_seeds = np.random.SeedSequence(seed).spawn(iterations)
    for m in range(1, iterations + 1):
        rng = np.random.default_rng(estep_seeds[m - 1])
        state.pseudo_y = e_step(state, params, rng)
        params, loglik = m_step(state, params, m_step_opt, seed)
        state.chain.append(params)
        state.chain_loglik.append(loglik)
    averaged = average_params(state.chain[state.burn_in + 1:])
    return _emulator_at(state, averaged), state


def sem_predict(model: Emulator, state: SemState, x_test, t_target: float,
                draws: int = DEFAULT_PREDICT_DRAWS, seed: int = 0) -> list[Prediction]:
    """Mixture prediction over fresh imputations at the final parameters.

    Each draw re-imputes pseudo outputs, rebuilds the emulator caches on the
    imputed data, and propagates; the mixture mean and variance combine the
    per-draw moments.  With no pseudo points this is exactly the plain
    batched prediction.
    """
    if state.n_pseudo_total == 0:
        return predict_batch(model, x_test, t_target)
    params = _params_of(model)
    draw_seeds = np.random.SeedSequence(seed).spawn(draws)
    x_test = np.atleast_2d(np.asarray(x_test, dtype=float))
    means = np.empty((draws, x_test.shape[0]))
    variances = np.empty((draws, x_test.shape[0]))
    work = SemState(data=state.data, kind=state.kind, plevels=state.plevels,
                    pseudo_y=state.pseudo_y)
    for m in range(draws):
        rng = np.random.default_rng(draw_seeds[m])
        work_m = SemState(data=state.data, kind=state.kind, plevels=state.plevels,
                          pseudo_y=e_step(work, params, rng))
        emulator_m = _emulator_at(work_m, params)
        preds = predict_batch(emulator_m, x_test, t_target)
        means[m] = [p.mean for p in preds]
        variances[m] = [p.variance for p in preds]
    mix_mean = np.mean(means, axis=0)
    mix_var = np.maximum(np.mean(means**2 + variances, axis=0) - mix_mean**2, 0.0)
    return [Prediction(mean=float(mu), variance=float(v), t_target=float(t_target))
            for mu, v in zip(mix_mean, mix_var)]


def write_chain_csv(path: str, state: SemState) -> None:
    """Chain diagnostics: iteration, every parameter, profile log-likelihood."""
    d1 = state.chain[0].theta1.size
    d = state.chain[0].hyper.theta_x.size
    header = (["iteration", "alpha1", "tau2_1"]
              + [f"theta1_{j + 1}" for j in range(d1)]
              + ["alpha", "tau2"]
              + [f"theta_x_{j + 1}" for j in range(d)]
              + ["theta_y", "theta_t", "beta", "delta", "profile_loglik"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for it, (p, ll) in enumerate(zip(state.chain, state.chain_loglik)):
            row = ([it, p.alpha1, p.tau2_1] + list(p.theta1)
                   + [p.alpha, p.tau2] + list(p.hyper.theta_x)
                   + [p.hyper.theta_y, p.hyper.theta_t, p.hyper.beta, p.hyper.delta, ll])
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
