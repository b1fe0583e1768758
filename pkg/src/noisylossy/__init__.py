"""Finite-blocklength bounds for lossy compression of noisy sources."""

from .model import (
    Channel,
    DistortionMatrix,
    Distribution,
    NoisySourceModel,
    builtin_bes,
    load_model,
    noiseless_model,
    random_model,
    surrogate_from_noisy,
)
from .rd_solver import solve_distortion, solve_slope
from .dispersion import analyze, dispersion_report, gaussian_approximation, tilted_info_table
from .bes import BesParams, bes_curve, bes_dispersions, bes_lambda_star, bes_rate
from .oneshot import (
    BlockSpec,
    achievability_random_coding,
    achievability_shannon_style,
    achievability_tilted,
    code_size_bracket,
    converse_bound,
    pi_excess_prob,
)

__version__ = "0.1.0"

__all__ = [
    "BesParams",
    "BlockSpec",
    "Channel",
    "DistortionMatrix",
    "Distribution",
    "NoisySourceModel",
    "achievability_random_coding",
    "achievability_shannon_style",
    "achievability_tilted",
    "analyze",
    "bes_curve",
    "bes_dispersions",
    "bes_lambda_star",
    "bes_rate",
    "builtin_bes",
    "code_size_bracket",
    "converse_bound",
    "dispersion_report",
    "gaussian_approximation",
    "load_model",
    "noiseless_model",
    "pi_excess_prob",
    "random_model",
    "solve_distortion",
    "solve_slope",
    "surrogate_from_noisy",
    "tilted_info_table",
]
