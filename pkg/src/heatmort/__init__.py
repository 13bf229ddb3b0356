"""Bayesian small-area models of heat-related mortality with pollution and socioeconomic effect modification."""

from .lgm import ModelSpec, PCPriorConfig
from .likelihoods import ObservationModel
from .data_model import Panel
from .inference import FitResult, fit_model, gaussian_approximation
from .selection import confounding_ladder, lag_search, ladder_verdict, waic

__all__ = [
    "ModelSpec", "PCPriorConfig", "ObservationModel", "Panel", "FitResult", "fit_model",
    "gaussian_approximation", "confounding_ladder", "lag_search", "ladder_verdict", "waic",
]
__version__ = "0.1.0"
