"""Multi-fidelity Gaussian-process emulation with tunable precision.

Fit hierarchical simulator outputs indexed by a precision-controlling
tuning parameter and predict, with calibrated uncertainty, at any tuning
value down to the exact-solution limit t = 0.
"""

from .dataset import (FidelityLevel, MultiFidelityData, NotNested,
                      TrainingAssembly, assemble, check_nested)
from .design import (BenchmarkFn, DomainViolation, Schedule, eval_benchmark,
                     generate_benchmark_data, make_schedule, nested_design)
from .fit import Emulator, fit, load_model, mle_mean_scale, profile_neg_loglik, save_model
from .kernels import (AugmentedPoint, KernelKind, Level1Hyper, NonsepHyper,
                      gram, gram_grad, k1, k_nonsep)
from .level1 import DegenerateData, Level1Model, fit_level1, predict_level1
from .linalg import NotPositiveDefinite
from .mc import McConfig, McResult, mc_propagate
from .metrics import ScoreReport, crps_gaussian, rmse, score
from .optimize import OptimizerConfig
from .predict import (NumericalVariance, OutOfRange, Prediction, h1, h1_matern,
                      h2, h2_matern, predict_batch, propagate)
from .sem import SemParams, SemState, build_pseudo_design, e_step, m_step, sem_fit, \
    sem_init, sem_predict

__version__ = "0.1.0"

__all__ = [
    "AugmentedPoint", "BenchmarkFn", "DegenerateData", "DomainViolation",
    "Emulator", "FidelityLevel", "KernelKind", "Level1Hyper", "Level1Model",
    "McConfig", "McResult", "MultiFidelityData", "NonsepHyper", "NotNested",
    "NotPositiveDefinite", "NumericalVariance", "OptimizerConfig", "OutOfRange",
    "Prediction", "Schedule", "ScoreReport", "SemParams", "SemState",
    "TrainingAssembly", "assemble", "build_pseudo_design", "check_nested",
    "crps_gaussian", "e_step", "eval_benchmark", "fit", "fit_level1",
    "generate_benchmark_data", "gram", "gram_grad", "h1", "h1_matern", "h2",
    "h2_matern", "k1", "k_nonsep", "load_model", "m_step", "make_schedule",
    "mc_propagate", "mle_mean_scale", "nested_design", "predict_batch",
    "predict_level1", "profile_neg_loglik", "propagate", "rmse", "save_model",
    "score", "sem_fit", "sem_init", "sem_predict",
]
