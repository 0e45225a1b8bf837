"""Sharp tail asymptotics for one-factor credit portfolio losses."""

from .dist import GeneralizedNormal, LogSmooth, LowerBoundedRV, PointMass, SymmetricRV
from .model import Exponential, BoundedGrid, PortfolioModel, Uniform01, model_from_dict, validate

__version__ = "0.1.0"

__all__ = [
    "GeneralizedNormal", "SymmetricRV", "LowerBoundedRV", "PointMass", "LogSmooth",
    "Uniform01", "BoundedGrid", "Exponential", "PortfolioModel", "model_from_dict", "validate",
]
