"""Domain vocabulary: model parameters, payoffs, grids, surfaces and control fields.

All containers are immutable after construction (frozen dataclasses whose
numpy members are flagged read-only), so they can be shared between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, NonFiniteError


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# Model parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """Market and band configuration.

    The volatility is only known to lie in ``[sigma0, sigma0 + eps]``.
    ``y0`` is the running integral of the spot at ``t = 0`` (normally 0).
    """

    r: float
    sigma0: float
    eps: float
    T: float
    x0: float = 100.0
    y0: float = 0.0

    def __post_init__(self):
        for name in ("r", "sigma0", "eps", "T", "x0", "y0"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"ModelParams.{name} must be a finite number, got {v!r}")
        if self.sigma0 <= 0:
            raise ConfigError(f"sigma0 must be > 0, got {self.sigma0}")
        if self.eps < 0:
            raise ConfigError(f"eps must be >= 0, got {self.eps}")
        if self.T <= 0:
            raise ConfigError(f"T must be > 0, got {self.T}")
        if self.x0 <= 0:
            raise ConfigError(f"x0 must be > 0, got {self.x0}")
        if self.y0 < 0:
            raise ConfigError(f"y0 must be >= 0, got {self.y0}")
        if not math.isfinite(self.sigma0 + self.eps):
            raise ConfigError("band upper edge sigma0 + eps is not finite")

    @property
    def sigma_hi(self) -> float:
        return self.sigma0 + self.eps

    def with_eps(self, eps: float) -> "ModelParams":
        return ModelParams(self.r, self.sigma0, eps, self.T, self.x0, self.y0)

    def with_sigma0(self, sigma0: float) -> "ModelParams":
        return ModelParams(self.r, sigma0, self.eps, self.T, self.x0, self.y0)

    def with_rate(self, r: float) -> "ModelParams":
        return ModelParams(r, self.sigma0, self.eps, self.T, self.x0, self.y0)


# ---------------------------------------------------------------------------
# Payoffs
# ---------------------------------------------------------------------------

# C^2 ramp rho_delta(z): the convolution of z^+ with the biweight kernel
# 15/(16 delta) (1 - (z/delta)^2)^2 on [-delta, delta].  rho equals z^+ for
# |z| >= delta, and rho(0) = 5 delta / 32.
_RAMP_C = 11.0 / 30.0


def _ramp(z: np.ndarray, delta: float) -> np.ndarray:
    t = np.clip(z / delta, -1.0, 1.0)
    t2 = t * t
    inner = delta * (0.5 * (t + 1.0) + (15.0 / 16.0) * (0.5 * t2 - t2 * t2 / 6.0 + t2 ** 3 / 30.0 - _RAMP_C))
    return np.where(z >= delta, z, np.where(z <= -delta, 0.0, inner))


def _ramp_d1(z: np.ndarray, delta: float) -> np.ndarray:
    t = np.clip(z / delta, -1.0, 1.0)
    return 0.5 + (15.0 / 16.0) * (t - 2.0 * t ** 3 / 3.0 + t ** 5 / 5.0)


def _ramp_d2(z: np.ndarray, delta: float) -> np.ndarray:
    t = z / delta
    return np.where(np.abs(t) < 1.0, (15.0 / (16.0 * delta)) * (1.0 - t * t) ** 2, 0.0)


@dataclass(frozen=True)
class Payoff:
    """Continuous piecewise-linear function of the average ``a = y / T``.

    ``values[k]`` is the payoff at ``breakpoints[k]``; outside the first and
    last breakpoint the payoff continues with ``left_slope`` and
    ``right_slope``.  ``mollify_width > 0`` selects the C^2 variant in which
    every kink is smoothed over ``[a_k - delta, a_k + delta]``.
    """

    breakpoints: tuple
    values: tuple
    left_slope: float = 0.0
    right_slope: float = 0.0
    mollify_width: float = 0.0
    name: str = "piecewise"

    def __post_init__(self):
        bp = tuple(float(b) for b in self.breakpoints)
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        if len(bp) == 0:
            raise ConfigError("payoff needs at least one breakpoint")
        if len(bp) != len(vals):
            raise ConfigError("breakpoints and values must have equal length")
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ConfigError(f"breakpoints must be strictly ascending, got {bp}")
        nums = bp + vals + (self.left_slope, self.right_slope, self.mollify_width)
        if not all(math.isfinite(v) for v in nums):
            raise ConfigError("payoff data must be finite")
        if self.mollify_width < 0:
            raise ConfigError("mollify_width must be >= 0")
        if self.mollify_width > 0 and len(bp) > 1:
            gap = min(b2 - b1 for b1, b2 in zip(bp, bp[1:]))
            if 2 * self.mollify_width > gap:
                raise ConfigError("mollify_width must not exceed half the smallest breakpoint gap")

    # -- constructors -------------------------------------------------------

    @classmethod
    def call(cls, strike: float, mollify_width: float = 0.0) -> "Payoff":
        return cls((strike,), (0.0,), 0.0, 1.0, mollify_width, "call")

    @classmethod
    def put(cls, strike: float, mollify_width: float = 0.0) -> "Payoff":
        return cls((strike,), (0.0,), -1.0, 0.0, mollify_width, "put")

    @classmethod
    def butterfly(cls, lower: float, middle: float, upper: float,
                  mollify_width: float = 0.0) -> "Payoff":
        """Long one call at ``lower`` and one at ``upper``, short two at ``middle``."""
        if not math.isclose(upper - middle, middle - lower, rel_tol=1e-12):
            raise ConfigError("butterfly wings must be symmetric around the middle strike")
        return cls((lower, middle, upper), (0.0, middle - lower, 0.0), 0.0, 0.0,
                   mollify_width, "butterfly")

    @classmethod
    def constant(cls, level: float = 1.0) -> "Payoff":
        return cls((0.0,), (level,), 0.0, 0.0, 0.0, "constant")

    @classmethod
    def linear(cls, slope: float = 1.0, intercept: float = 0.0) -> "Payoff":
        """``phi(a) = intercept + slope * a``."""
        return cls((0.0,), (intercept,), slope, slope, 0.0, "linear")

    def with_mollify(self, delta: float) -> "Payoff":
        return Payoff(self.breakpoints, self.values, self.left_slope, self.right_slope, delta, self.name)

    # -- derived quantities -------------------------------------------------

    @property
    def slopes(self) -> tuple:
        """Segment slopes from left tail to right tail (len = breakpoints + 1)."""
        bp, v = self.breakpoints, self.values
        inner = tuple((v[k + 1] - v[k]) / (bp[k + 1] - bp[k]) for k in range(len(bp) - 1))
        return (self.left_slope,) + inner + (self.right_slope,)

    @property
    def slope_jumps(self) -> tuple:
        s = self.slopes
        return tuple(s[k + 1] - s[k] for k in range(len(self.breakpoints)))

    @property
    def lipschitz(self) -> float:
        return max(abs(s) for s in self.slopes)

    @property
    def max_jump(self) -> float:
        return max((abs(j) for j in self.slope_jumps), default=0.0)

    @property
    def is_convex(self) -> bool:
        return all(j >= 0 for j in self.slope_jumps)

    def __call__(self, a):
        return payoff_eval(self, a)


def payoff_eval(p: Payoff, a):
    """phi(a), or the mollified phi_delta(a) when ``p.mollify_width > 0``."""
    a = np.asarray(a, dtype=float)
    bp = np.asarray(p.breakpoints)
    vals = np.asarray(p.values)
    out = np.interp(a, bp, vals)
    out = np.where(a < bp[0], vals[0] + p.left_slope * (a - bp[0]), out)
    out = np.where(a > bp[-1], vals[-1] + p.right_slope * (a - bp[-1]), out)
    delta = p.mollify_width
    if delta > 0:
        for ak, jk in zip(p.breakpoints, p.slope_jumps):
            z = a - ak
            near = np.abs(z) < delta
            if np.any(near):
                out = out + jk * np.where(near, _ramp(z, delta) - np.maximum(z, 0.0), 0.0)
    return out if out.ndim else float(out)


def payoff_second_derivative(p: Payoff, a):
    """phi_delta''(a) of the mollified payoff (units 1/currency)."""
    if p.mollify_width <= 0:
        raise ConfigError(
            "second derivative is only defined for the mollified payoff (mollify_width > 0)"
        )
    a = np.asarray(a, dtype=float)
    out = np.zeros_like(a)
    for ak, jk in zip(p.breakpoints, p.slope_jumps):
        out = out + jk * _ramp_d2(a - ak, p.mollify_width)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


def _check_nodes(name: str, nodes: np.ndarray):
    if nodes.ndim != 1 or nodes.size < 3:
        raise ConfigError(f"{name} needs at least 3 nodes")
    if not np.all(np.isfinite(nodes)):
        raise ConfigError(f"{name} contains non-finite values")
    if not np.all(np.diff(nodes) > 0):
        raise ConfigError(f"{name} must be strictly increasing")
    if nodes[0] != 0.0:
        raise ConfigError(f"{name} must start at 0")


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Tensor-product grid on ``[0, x_max] x [0, y_max]``; y is always uniform."""

    x_nodes: np.ndarray
    y_nodes: np.ndarray

    def __post_init__(self):
        x = _frozen(self.x_nodes)
        y = _frozen(self.y_nodes)
        _check_nodes("x_nodes", x)
        _check_nodes("y_nodes", y)
        dy = np.diff(y)
        if not np.allclose(dy, dy[0], rtol=1e-9, atol=0.0):
            raise ConfigError("y_nodes must be uniformly spaced")
        object.__setattr__(self, "x_nodes", x)
        object.__setattr__(self, "y_nodes", y)

    @classmethod
    def uniform(cls, nx: int, ny: int, x_max: float, y_max: float) -> "Grid2D":
        return cls(np.linspace(0.0, x_max, nx), np.linspace(0.0, y_max, ny))

    @classmethod
    def for_params(cls, params: ModelParams, nx: int, ny: int, x_mult: float = 4.0,
                   stretch: float = 0.0) -> "Grid2D":
        """Grid with ``x_max = x_mult * x0`` and ``y_max = x_max * T``.

        ``stretch > 0`` clusters x-nodes around ``x0`` with a sinh map; larger
        values cluster harder.
        """
        if x_mult < 4.0:
            raise ConfigError(f"x_mult must be >= 4 to cover the diffusion, got {x_mult}")
        x_max = x_mult * params.x0
        if stretch > 0:
            alpha = params.x0 / stretch
            c1 = math.asinh(-params.x0 / alpha)
            c2 = math.asinh((x_max - params.x0) / alpha)
            xi = np.linspace(0.0, 1.0, nx)
            x = params.x0 + alpha * np.sinh(c2 * xi + c1 * (1.0 - xi))
            x[0], x[-1] = 0.0, x_max
        else:
            x = np.linspace(0.0, x_max, nx)
        return cls(x, np.linspace(0.0, x_max * params.T, ny))

    @property
    def nx(self) -> int:
        return self.x_nodes.size

    @property
    def ny(self) -> int:
        return self.y_nodes.size

    @property
    def shape(self) -> tuple:
        return (self.nx, self.ny)

    @property
    def x_max(self) -> float:
        return float(self.x_nodes[-1])

    @property
    def y_max(self) -> float:
        return float(self.y_nodes[-1])

    @property
    def dy(self) -> float:
        return float(self.y_nodes[1] - self.y_nodes[0])

    @property
    def is_uniform_x(self) -> bool:
        dx = np.diff(self.x_nodes)
        return bool(np.allclose(dx, dx[0], rtol=1e-12, atol=0.0))

    def validate_for(self, params: ModelParams, x_mult_min: float = 4.0):
        """Raise ConfigError unless the grid covers the model's reachable domain."""
        tol = 1e-12
        if self.x_max < x_mult_min * params.x0 * (1 - tol):
            raise ConfigError(
                f"x_max={self.x_max} must be >= {x_mult_min} * x0 = {x_mult_min * params.x0}"
            )
        if self.y_max < self.x_max * params.T * (1 - tol):
            raise ConfigError(f"y_max={self.y_max} must be >= x_max * T = {self.x_max * params.T}")
        if params.y0 > self.y_max:
            raise ConfigError("y0 lies outside the grid")

    def same_as(self, other: "Grid2D") -> bool:
        return (self is other) or (
            np.array_equal(self.x_nodes, other.x_nodes) and np.array_equal(self.y_nodes, other.y_nodes)
        )


@dataclass(frozen=True)
class TimeGrid:
    T: float
    n_steps: int

    def __post_init__(self):
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigError(f"n_steps must be an integer >= 1, got {self.n_steps}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError(f"T must be positive, got {self.T}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def time(self, k: int) -> float:
        return self.T * k / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.T * np.arange(self.n_steps + 1) / self.n_steps


# ---------------------------------------------------------------------------
# Surfaces and control fields
# ---------------------------------------------------------------------------


def bilinear(grid: Grid2D, values: np.ndarray, x: float, y: float) -> float:
    """Bilinear interpolation of node values at a point inside the grid."""
    xs, ys = grid.x_nodes, grid.y_nodes
    if not (xs[0] <= x <= xs[-1] and ys[0] <= y <= ys[-1]):
        raise ConfigError(f"point ({x}, {y}) lies outside the grid")
    i = int(np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2))
    j = int(np.clip(np.searchsorted(ys, y, side="right") - 1, 0, ys.size - 2))
    wx = (x - xs[i]) / (xs[i + 1] - xs[i])
    wy = (y - ys[j]) / (ys[j + 1] - ys[j])
    v = values
    return float(
        (1 - wx) * (1 - wy) * v[i, j] + wx * (1 - wy) * v[i + 1, j]
        + (1 - wx) * wy * v[i, j + 1] + wx * wy * v[i + 1, j + 1]
    )


@dataclass(frozen=True, eq=False)
class PriceSurface:
    """Node values ``V[i, j]`` at one time level."""

    grid: Grid2D
    values: np.ndarray
    t: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ConfigError(f"surface shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(-1, self.t)
        if v.flags.writeable:
            v = v.view()
            v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def value_at(self, x: float, y: float) -> float:
        return bilinear(self.grid, self.values, x, y)

    @property
    def scale(self) -> float:
        return max(1.0, float(np.max(np.abs(self.values))))


class SurfaceSeries(Sequence):
    """Time-indexed sequence of surfaces, index 0 is ``t = 0``.

    Levels may be decimated (``store_every > 1``); ``step_indices`` records
    which time-grid levels are stored and :meth:`at_time` interpolates
    linearly in time between them.
    """

    def __init__(self, grid: Grid2D, tgrid: TimeGrid, data: np.ndarray, step_indices: np.ndarray,
                 stats: dict | None = None):
        data = np.asarray(data)
        if data.ndim != 3 or data.shape[1:] != grid.shape:
            raise ConfigError("surface data must have shape (levels, nx, ny)")
        self.grid = grid
        self.tgrid = tgrid
        self._data = data
        self._data.flags.writeable = False
        self.step_indices = _frozen(step_indices, dtype=np.int64)
        self.times = _frozen(tgrid.T * self.step_indices / tgrid.n_steps)
        self.stats = dict(stats or {})

    def __len__(self) -> int:
        return self._data.shape[0]

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        return PriceSurface(self.grid, self._data[k], float(self.times[k]))

    def __iter__(self) -> Iterator[PriceSurface]:
        for k in range(len(self)):
            yield self[k]

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def is_complete(self) -> bool:
        return len(self) == self.tgrid.n_steps + 1

    @property
    def initial(self) -> PriceSurface:
        return self[0]

    def price(self, x: float, y: float) -> float:
        return self[0].value_at(x, y)

    def at_time(self, t: float) -> np.ndarray:
        ts = self.times
        if t <= ts[0]:
            return self._data[0]
        if t >= ts[-1]:
            return self._data[-1]
        k = int(np.searchsorted(ts, t, side="right") - 1)
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        return (1 - w) * self._data[k] + w * self._data[k + 1]


class ControlField:
    """Per-level bang-bang indicator ``gamma[i, j]`` in {0, 1}.

    The volatility at a node is ``sigma_hi`` where gamma is 1 and
    ``sigma_lo`` where it is 0.
    """

    def __init__(self, grid: Grid2D, times, mask, sigma_lo: float, sigma_hi: float):
        mask = np.asarray(mask)
        if mask.ndim != 3 or mask.shape[1:] != grid.shape:
            raise ConfigError("control mask must have shape (levels, nx, ny)")
        if mask.dtype != np.uint8:
            if not np.all((mask == 0) | (mask == 1)):
                raise ConfigError("control values must be exactly 0 or 1")
            mask = mask.astype(np.uint8)
        elif mask.size and mask.max() > 1:
            raise ConfigError("control values must be exactly 0 or 1")
        times = np.asarray(times, dtype=float)
        if times.shape != (mask.shape[0],) or np.any(np.diff(times) <= 0):
            raise ConfigError("control times must be strictly increasing, one per level")
        self.grid = grid
        self.times = _frozen(times)
        self.mask = mask
        self.mask.flags.writeable = False
        self.sigma_lo = float(sigma_lo)
        self.sigma_hi = float(sigma_hi)

    def __len__(self) -> int:
        return self.mask.shape[0]

    def sigma(self, k: int) -> np.ndarray:
        return np.where(self.mask[k] == 1, self.sigma_hi, self.sigma_lo)

    def nearest_level(self, t):
        ts = self.times
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(ts, t), 1, ts.size - 1) if ts.size > 1 else np.zeros_like(t, int)
        if ts.size > 1:
            k = np.where(np.abs(t - ts[k - 1]) <= np.abs(ts[k] - t), k - 1, k)
        return k

    def lookup(self, k: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """gamma at level ``k`` for the nearest grid node to each (x, y)."""
        i = _nearest_index(self.grid.x_nodes, x)
        j = _nearest_index(self.grid.y_nodes, y)
        return self.mask[k][i, j]


def _nearest_index(nodes: np.ndarray, v: np.ndarray) -> np.ndarray:
    k = np.clip(np.searchsorted(nodes, v), 1, nodes.size - 1)
    left = nodes[k - 1]
    right = nodes[k]
    return np.where(np.abs(v - left) <= np.abs(right - v), k - 1, k)
