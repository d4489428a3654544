"""Order selection and estimation for hidden Markov models by double-penalised likelihood."""
from .errors import (ConfigError, ConvergenceError, DimensionError, DomainError, DPMLEError, FittingError,
                     NumericError, ParseError, SearchError, SingularChainError, UnderflowError)
from .kernels import BACKEND, available_backends
from .emissions import EmissionParams
from .hmm import (CovariateLogit, Homogeneous, ObservationSet, ParameterVector, Series, forward_backward,
                  log_likelihood, stationary_distribution, viterbi)
from .penalty import PenaltyConfig, scad_derivative, scad_value
from .em import e_step, fit_mle
from .dpmle import FitOptions, count_distinct_states, fit_dpmle, merge_model
from .selection import aic, bic, ic_order_select, nic, nic_search, num_params
from .scenarios import ScenarioConfig, simulate
from .movement import RawTrack, preprocess

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "ConvergenceError", "CovariateLogit", "DPMLEError", "DimensionError",
    "DomainError", "EmissionParams", "FitOptions", "FittingError", "Homogeneous", "NumericError",
    "ObservationSet", "ParameterVector", "ParseError", "PenaltyConfig", "RawTrack", "ScenarioConfig",
    "SearchError", "Series", "SingularChainError", "UnderflowError", "aic", "available_backends", "bic",
    "count_distinct_states", "e_step", "fit_dpmle", "fit_mle", "forward_backward", "ic_order_select",
    "log_likelihood", "merge_model", "nic", "nic_search", "num_params", "preprocess", "scad_derivative",
    "scad_value", "simulate", "stationary_distribution", "viterbi",
]
