"""Offline policy evaluation with linear features.

Tabular MDPs, feature maps, offline datasets, fitted Q-iteration and LSTD,
data-shift and error-amplification diagnostics, and a seeded experiment
runner that writes CSV artifacts.
"""

from .data import (
    CovarianceBundle, TransitionDataset, build_covariance_bundle, mix_datasets,
    population_bundle, sample_iid_dataset, sample_offline_dataset,
)
from .diagnostics import (
    amplification_spectrum, completeness_residual, non_expansiveness_check, shift_constants,
)
from .errors import ChainError, ConfigError, NumericalError, OpevalError, SingularSystemError
from .estimators import (
    EvalSet, FqiConfig, exact_expectation_fqi, fitted_q_iteration, hyperparameter_sweep, lstd,
    lemma1_decomposition, run_fqi,
)
from .features import (
    FeatureMap, one_hot_features, random_fourier_features, spectral_features,
)
from .mdp import (
    DiscountedMDP, Policy, exact_q_value, monte_carlo_value, stationary_distribution,
)

__version__ = "0.1.0"

__all__ = [
    "ChainError", "ConfigError", "CovarianceBundle", "DiscountedMDP", "EvalSet", "FeatureMap",
    "FqiConfig", "NumericalError", "OpevalError", "Policy", "SingularSystemError",
    "TransitionDataset", "amplification_spectrum", "build_covariance_bundle",
    "completeness_residual", "exact_expectation_fqi", "exact_q_value", "fitted_q_iteration",
    "hyperparameter_sweep", "lemma1_decomposition", "lstd", "mix_datasets", "monte_carlo_value",
    "non_expansiveness_check", "one_hot_features", "population_bundle", "random_fourier_features",
    "run_fqi", "sample_iid_dataset", "sample_offline_dataset", "shift_constants",
    "spectral_features", "stationary_distribution",
]
