"""Worst-case (sup over the volatility band) Asian price.

The pointwise sup of ``1/2 x^2 sigma^2 Gamma`` over ``sigma in [sigma0,
sigma0 + eps]`` sits at an endpoint: the upper one where ``Gamma >= 0``.  Each
implicit step is solved by policy iteration on that two-point control.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import ControlField, Grid2D, ModelParams, Payoff, PriceSurface, SurfaceSeries, TimeGrid
from .errors import ConfigError
from .pde_linear import (SOLVE_COUNTER, PolicyIterConfig, SchemeConfig, _march,
                         _gamma_interior, terminal_values)

logger = logging.getLogger(__name__)

__all__ = ["PolicyIterConfig", "BSBResult", "solve_bsb", "policy_improve", "expansion_error"]


@dataclass(frozen=True, eq=False)
class BSBResult:
    """Price levels and the control that attains the sup; unpacks as ``(levels, control)``."""

    levels: SurfaceSeries
    control: ControlField
    stats: dict = field(default_factory=dict)

    def __iter__(self):
        yield self.levels
        yield self.control

    @property
    def max_policy_iters(self) -> int:
        return int(self.stats.get("max_policy_iters", 0))


def solve_bsb(params: ModelParams, payoff: Payoff, grid: Grid2D, tgrid: TimeGrid,
              scheme: SchemeConfig = SchemeConfig(),
              pcfg: PolicyIterConfig = PolicyIterConfig()) -> BSBResult:
    """Worst-case price over the band ``[sigma0, sigma0 + eps]``.

    With ``eps = 0`` this runs the identical march as :func:`solve_v0` and the
    result matches it bit for bit.
    """
    grid.validate_for(params)
    if not np.isclose(tgrid.T, params.T, rtol=1e-12):
        raise ConfigError("time grid maturity does not match the model")
    SOLVE_COUNTER["bsb"] += 1
    levels, control = _march(grid, tgrid, scheme, params.r, terminal_values(payoff, grid, params.T),
                             params.sigma0, params.sigma_hi, pcfg, want_control=True)
    stats = dict(levels.stats)
    logger.info("solve_bsb eps=%g: max policy iterations per step %d", params.eps,
                stats["max_policy_iters"])
    return BSBResult(levels, control, stats)


def policy_improve(surface: PriceSurface, params: ModelParams) -> np.ndarray:
    """Volatility attaining the sup at each node: ``sigma0 + eps`` where Gamma >= 0.

    Gamma uses the operator's three-point stencil; the x-boundary rows carry
    no diffusion, so they count as ties and take the upper edge.
    """
    G = _gamma_interior(surface.values, surface.grid.x_nodes)
    return np.where(G >= 0.0, params.sigma_hi, params.sigma0)


def expansion_error(v_eps: PriceSurface, v0: PriceSurface, v1: PriceSurface, eps: float,
                    x0: float = 100.0, y0: float = 0.0) -> float:
    """``|V_eps - V0 - eps V1| / eps`` at ``(x0, y0)`` (bilinear interpolation)."""
    if not eps > 0:
        raise ConfigError("eps must be > 0 for the expansion ratio")
    if not (v_eps.grid.same_as(v0.grid) and v0.grid.same_as(v1.grid)):
        raise ConfigError("surfaces must share a grid")
    a = v_eps.value_at(x0, y0)
    b = v0.value_at(x0, y0)
    c = v1.value_at(x0, y0)
    return abs(a - b - eps * c) / eps
