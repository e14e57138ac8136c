"""First-order correction ``V1`` of the worst-case price in the band width.

V1 solves the constant-volatility (sigma0) linear equation with zero terminal
data and the source ``sigma0 x^2 max(Gamma0, 0)``, where ``Gamma0`` is the
x-gamma of the sigma0 price.  The source is evaluated on the same time levels
as the theta-scheme uses, so V1 is the exact derivative in ``eps`` at 0 of the
discrete worst-case solver whenever the control does not flip.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from .core import ControlField, Grid2D, ModelParams, PriceSurface, SurfaceSeries, TimeGrid
from .errors import ConfigError
from .pde_linear import (SOLVE_COUNTER, PolicyIterConfig, SchemeConfig, _gamma_interior, _march,
                         second_derivative_field)

logger = logging.getLogger(__name__)


def _levels_array(v0_levels) -> np.ndarray:
    if isinstance(v0_levels, SurfaceSeries):
        return v0_levels.data
    return np.stack([s.values for s in v0_levels])


def _level_times(v0_levels) -> np.ndarray:
    if isinstance(v0_levels, SurfaceSeries):
        return v0_levels.times
    return np.array([s.t for s in v0_levels], dtype=float)


def gamma_bar_field(v0_levels: Sequence[PriceSurface], params: ModelParams | None = None) -> ControlField:
    """Indicator ``Gamma0 >= 0`` at every node and stored level.

    With ``params`` the returned field maps 1 to ``sigma0 + eps`` and 0 to
    ``sigma0``; without it, ``sigma()`` returns the indicator itself.
    """
    surfaces = list(v0_levels)
    if not surfaces:
        raise ConfigError("no V0 levels supplied")
    grid = surfaces[0].grid
    mask = np.stack([second_derivative_field(s) >= 0.0 for s in surfaces]).astype(np.uint8)
    lo, hi = (params.sigma0, params.sigma_hi) if params is not None else (0.0, 1.0)
    return ControlField(grid, _level_times(v0_levels), mask, lo, hi)


def source_field(v0: PriceSurface, sigma0: float) -> np.ndarray:
    """``sigma0 x^2 max(Gamma0, 0)`` at every node."""
    G = second_derivative_field(v0)
    x2 = (v0.grid.x_nodes ** 2)[:, None]
    return sigma0 * x2 * np.maximum(G, 0.0)


def solve_v1(params: ModelParams, v0_levels: Sequence[PriceSurface], gbar: ControlField | None,
             grid: Grid2D, tgrid: TimeGrid, scheme: SchemeConfig = SchemeConfig()) -> SurfaceSeries:
    """Solve for V1 on ``tgrid``.

    ``v0_levels`` must hold every time level of ``tgrid`` (``store_every=1``).
    The x-boundary rows carry no source: the boundary closures of the
    worst-case solver do not depend on the volatility.
    """
    data = _levels_array(v0_levels)
    if data.shape != (tgrid.n_steps + 1,) + grid.shape:
        raise ConfigError(
            f"V0 levels have shape {data.shape}; expected every level of a "
            f"{tgrid.n_steps}-step march on a {grid.shape} grid (store_every=1)"
        )
    if gbar is not None:
        if not gbar.grid.same_as(grid) or len(gbar) != data.shape[0]:
            raise ConfigError("control field and V0 levels do not share grid and time levels")
    grid.validate_for(params)
    SOLVE_COUNTER["linear"] += 1
    x = grid.x_nodes
    coef = params.sigma0 * (x * x)[:, None]

    def source(k: int) -> np.ndarray:
        return coef * np.maximum(_gamma_interior(data[k], x), 0.0)

    s = params.sigma0
    series, _ = _march(grid, tgrid, scheme, params.r, np.zeros(grid.shape), s, s,
                       PolicyIterConfig(), source=source)
    logger.debug("solve_v1 done, V1(0,x0,y0)=%g", series.price(params.x0, params.y0))
    return series
