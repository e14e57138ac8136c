"""Worst-case arithmetic-Asian option pricing under an uncertain volatility band.

The volatility is only known to lie in ``[sigma0, sigma0 + eps]``.  The
package computes the worst-case (seller's) price by a nonlinear PDE solve,
the first-order expansion ``V0 + eps V1`` around the constant-volatility
price, and Monte Carlo cross-checks of both.
"""

from .bsb import BSBResult, expansion_error, policy_improve, solve_bsb
from .core import ControlField, Grid2D, ModelParams, Payoff, PriceSurface, SurfaceSeries, TimeGrid
from .correction import gamma_bar_field, solve_v1, source_field
from .errors import (AsianUVMError, ConfigError, NonFiniteError, PolicyIterationError,
                     SingularSystemError, SolverError)
from .mc import MCConfig, MCResult, price_constant_vol, price_worst_case
from .pde_linear import (OperatorCoefficients, PolicyIterConfig, SchemeConfig, second_derivative_field,
                         solve_v0, step_backward)

__version__ = "0.1.0"

__all__ = [
    "AsianUVMError", "BSBResult", "ConfigError", "ControlField", "Grid2D", "MCConfig", "MCResult",
    "ModelParams", "NonFiniteError", "OperatorCoefficients", "Payoff", "PolicyIterConfig",
    "PolicyIterationError", "PriceSurface", "SchemeConfig", "SingularSystemError", "SolverError",
    "SurfaceSeries", "TimeGrid", "expansion_error", "gamma_bar_field", "policy_improve",
    "price_constant_vol", "price_worst_case", "second_derivative_field", "solve_bsb", "solve_v0",
    "solve_v1", "source_field", "step_backward",
]
