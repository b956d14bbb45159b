"""Numerics for the critical stochastic heat equation with Riesz-kernel noise."""
from .errors import (DomainError, Error, HeavyTailError, NumericalError,
                     SimulationBlowUpError, UnreliableEstimateError)
from .params import Estimate, ModelParams, QuadratureSpec, critical_kappa

__all__ = ["DomainError", "Error", "Estimate", "HeavyTailError", "ModelParams",
           "NumericalError", "QuadratureSpec", "SimulationBlowUpError",
           "UnreliableEstimateError", "critical_kappa"]
