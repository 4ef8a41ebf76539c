"""Linear precoding for amplify-and-forward MIMO two-way relay systems.

Three designs share one system model (:mod:`twrelay.model`):

* :func:`run_algorithm1`, joint iterative MMSE precoding,
* :func:`run_algorithm2`, channel parallelization with power allocation,
* :func:`run_algorithm3`, single-stream source antenna selection,

and :func:`run_sweep` evaluates them by Monte Carlo simulation.
"""

from .cp import CpOptions, parallelize, run_algorithm2
from .errors import (ConfigurationError, ConstraintError, DecompositionError,
                     DefinitenessError, DimensionError, IllConditionedError,
                     InfeasibleBudgetError, PrecodingError, SolverError)
from .iterative import IterativeOptions, run_algorithm1, run_best_of
from .model import (ChannelSet, PrecoderSet, SystemConfig, identity_precoders,
                    total_mmse_residual, total_mse)
from .sas import SasOptions, run_algorithm3
from .sim import ExperimentSpec, SweepResult, run_sweep

__all__ = [
    "ChannelSet", "ConfigurationError", "ConstraintError", "CpOptions",
    "DecompositionError", "DefinitenessError", "DimensionError",
    "ExperimentSpec", "IllConditionedError", "InfeasibleBudgetError",
    "IterativeOptions", "PrecoderSet", "PrecodingError", "SasOptions",
    "SolverError", "SweepResult", "SystemConfig", "identity_precoders",
    "parallelize", "run_algorithm1", "run_algorithm2", "run_algorithm3",
    "run_best_of", "run_sweep", "total_mmse_residual", "total_mse",
]
