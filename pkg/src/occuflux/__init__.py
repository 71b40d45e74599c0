"""Subcritical branching particle systems with Poisson immigration.

Simulation of the system and of single families, limit covariance
quadratures, the one-particle integral equation, and the statistics used
to compare finite-T Monte Carlo output with the Wiener-process limit.
"""
from .model import (GaussianBump, ParameterError, PiecewiseLinear, SpaceTimeTest, SystemParams,
                    eval_phi, fourier_phi, params_from_json, validate_params)
from .motion import MotionSpec, char_exponent, sample_increment, semigroup_apply

__version__ = "0.1.0"

__all__ = [
    "GaussianBump", "ParameterError", "PiecewiseLinear", "SpaceTimeTest", "SystemParams",
    "eval_phi", "fourier_phi", "params_from_json", "validate_params",
    "MotionSpec", "char_exponent", "sample_increment", "semigroup_apply",
    "reference_params", "__version__",
]


def reference_params(**changes) -> SystemParams:
    """d=1 Brownian (sigma=1), V=1, q=1/4, H=1/2, L=H/Q=1."""
    base = SystemParams(V=1.0, q=0.25, H=0.5, L=1.0, motion=MotionSpec.brownian(1.0))
    return base.with_(**changes) if changes else validate_params(base)
