"""Zeroth-order minimisation of submodular set functions through the Lovasz extension."""

from .errors import (CapabilityError, ConfigError, DimensionError, DomainError, IterationError, NumericError,
                     ParameterError, ZosfmError)
from .lovasz import (ExactExtension, LovaszBackend, StochasticExtension, lovasz_exact, lovasz_stochastic,
                     lovasz_subgradient, make_extension, rounding_expectation, threshold_round)
from .online import (OnlineProblem, RegretLedger, derive_dynamic_hyperparams, derive_static_hyperparams,
                     dynamic_bound, minimiser_path, path_length, solve_online, solve_online_many, static_bound)
from .optim import (BestOfSequence, OfflineHyperparams, RunTrace, derive_offline_hyperparams, estimate_lipschitz,
                    offline_bound, project_cube, solve_offline, solve_offline_many, solve_subgradient)
from .setfn import (ConcaveCardinality, GraphCut, ModularFunction, SetFunction, SumFunction, TabulatedFunction,
                    brute_force_min, is_submodular, tabulate)
from .smoothing import SmoothingConfig, oracle_batch

__all__ = [
    "BestOfSequence", "CapabilityError", "ConcaveCardinality", "ConfigError", "DimensionError", "DomainError",
    "ExactExtension", "GraphCut", "IterationError", "LovaszBackend", "ModularFunction", "NumericError",
    "OfflineHyperparams", "OnlineProblem", "ParameterError", "RegretLedger", "RunTrace", "SetFunction",
    "SmoothingConfig", "StochasticExtension", "SumFunction", "TabulatedFunction", "ZosfmError",
    "brute_force_min", "derive_dynamic_hyperparams", "derive_offline_hyperparams", "derive_static_hyperparams",
    "dynamic_bound", "estimate_lipschitz", "is_submodular", "lovasz_exact", "lovasz_stochastic",
    "lovasz_subgradient", "make_extension", "minimiser_path", "offline_bound", "oracle_batch", "path_length",
    "project_cube", "rounding_expectation", "solve_offline", "solve_offline_many", "solve_online",
    "solve_online_many", "solve_subgradient", "static_bound", "tabulate", "threshold_round",
]
