"""Ensembles of residual flow-map networks and their one-step error statistics."""
from .errors import (ConfigError, CorruptFileError, EnsembleTrainingError, FlowmapError,
                     IntegrationError, InvalidArgumentError, InvalidModelError, ModelFileError,
                     RolloutDivergedError, TrainingDivergedError, VersionMismatchError)
from .kernels import BACKEND
from .nncore import Architecture, forward, param_count
from .optim import TrainConfig
from .predict import RolloutResult, ensemble_step, rollout, rollout_individual
from .stats import (bias_variance_mse, bootstrap_ensembles, chi2_gof_gaussian,
                    one_step_errors, variance_scaling_report)
from .systems import chaotic4d, get_system, integrate, pendulum, rk4_step
from .training import (Dataset, Ensemble, build_dataset, load_dataset, load_model,
                       save_dataset, save_model, train_ensemble, train_one)

__version__ = "0.1.0"

__all__ = [
    "Architecture", "BACKEND", "ConfigError", "CorruptFileError", "Dataset", "Ensemble",
    "EnsembleTrainingError", "FlowmapError", "IntegrationError", "InvalidArgumentError",
    "InvalidModelError", "ModelFileError", "RolloutDivergedError", "RolloutResult",
    "TrainConfig", "TrainingDivergedError", "VersionMismatchError", "bias_variance_mse",
    "bootstrap_ensembles", "build_dataset", "chaotic4d", "chi2_gof_gaussian", "ensemble_step",
    "forward", "get_system", "integrate", "load_dataset", "load_model", "one_step_errors",
    "param_count", "pendulum", "rk4_step", "rollout", "rollout_individual", "save_dataset",
    "save_model", "train_ensemble", "train_one", "variance_scaling_report",
]
