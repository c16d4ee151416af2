"""Expectation propagation for Bayesian probit regression.

Dense and low-rank EP engines, closed-form predictive probabilities and
independent oracles (quadrature, Gibbs/HMC samplers, Monte Carlo).
"""

__version__ = "0.1.0"

from .ep_engine import (
    CavityBreakdown,
    Dataset,
    EpConfig,
    FitDiagnostics,
    NonProgress,
    UpdateRejected,
    assemble_covariance,
    fit,
)
from .predictive import GaussianPosterior, PredictiveResult, predict_batch, predict_one
from .special_fn import std_normal_cdf, zeta1, zeta2

__all__ = [
    "CavityBreakdown",
    "Dataset",
    "EpConfig",
    "FitDiagnostics",
    "GaussianPosterior",
    "NonProgress",
    "PredictiveResult",
    "UpdateRejected",
    "assemble_covariance",
    "fit",
    "predict_batch",
    "predict_one",
    "std_normal_cdf",
    "zeta1",
    "zeta2",
]
