"""Reduced-order surrogates ``f(x) ~ g(U^T x)`` with a Grassmann-constrained basis.

The basis ``U`` and a shallow ReLU network ``g`` are trained by alternating
between ADAM on the network and Riemannian steepest descent on ``U``, with
optional active-subspace initialization from Jacobian samples.
"""
__version__ = "0.1.0"

from .activesub import (SpectralInfo, active_subspace, assemble_gradient_matrix,
                        conditional_expectation_oracle, rotated_gradient_energy)
from .dataset import Dataset, read_csv, write_csv
from .estimator import BowtieRegressor, GrassmannRidgeRegressor
from .ridgenet import BowtieParams, NetParams, bowtie_param_count, param_count
from .trainer import TrainConfig, TrainTrace, alternating_fit, bowtie_fit

__all__ = [
    "BowtieParams", "BowtieRegressor", "Dataset", "GrassmannRidgeRegressor",
    "NetParams", "SpectralInfo", "TrainConfig", "TrainTrace", "active_subspace",
    "alternating_fit", "assemble_gradient_matrix", "bowtie_fit",
    "bowtie_param_count", "conditional_expectation_oracle", "param_count",
    "read_csv", "rotated_gradient_energy", "write_csv",
]
