"""Finite-difference solver for the linear Asian operator.

    L(sigma) V = dV/dt + r x dV/dx - r V + x dV/dy + 1/2 sigma^2 x^2 d2V/dx2

One backward step from level n+1 to level n:

* the explicit part ``V + (1 - theta) dt (L_x V + f)`` is formed on level
  n+1 and carried along the y-characteristic ``y -> y + x dt``.  By default
  (``y_advection=3``) this is a cubic Lagrange interpolation at the departure
  point; ``y_advection=1`` is the monotone first-order upwind transport,
  sub-cycled when ``x_max dt > dy``.
* the implicit part ``theta dt L_x`` (diffusion and drift) is one tridiagonal
  system per y-slice.
* the discount is exact: the solve is for ``exp(r dt) V`` and the result is
  multiplied by ``exp(-r dt)``.

Boundary rows: ``x = 0`` is integrated exactly (``V <- exp(-r dt) V``).  At
``x = x_max`` the second derivative is taken as zero and the drift term is
dropped as well: the drift is an inflow there, and a one-sided difference for
it would give the row a positive off-diagonal and break the discrete maximum
principle.  The price at interior nodes is insensitive to this choice (drift
travels a fraction ``exp(rT) - 1`` of x_max).  The march is
shared with the Black-Scholes-Barenblatt solver through ``_march``; with a
single volatility the policy loop accepts after one solve.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from .core import ControlField, Grid2D, ModelParams, Payoff, PriceSurface, SurfaceSeries, TimeGrid
from .errors import ConfigError, NonFiniteError, PolicyIterationError, SingularSystemError

logger = logging.getLogger(__name__)

# number of linear / nonlinear PDE solves performed in this process
SOLVE_COUNTER: Counter = Counter()


@dataclass(frozen=True)
class SchemeConfig:
    """Discretisation knobs.

    theta: time weighting of the x-direction (1 implicit, 0.5 Crank-Nicolson).
    rannacher_steps: fully implicit steps at the start of the backward march.
    y_advection: 1 = first-order upwind; 3 or 5 = cubic or quintic semi-Lagrangian.
    store_every: keep every k-th time level (levels 0 and n always kept).
    workers: threads used for the per-slice tridiagonal solves.
    """

    theta: float = 0.5
    rannacher_steps: int = 2
    y_advection: int = 3
    store_every: int = 1
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError(f"theta must lie in [0, 1], got {self.theta}")
        if self.rannacher_steps < 0:
            raise ConfigError("rannacher_steps must be >= 0")
        if self.y_advection not in (1, 3, 5):
            raise ConfigError(f"y_advection must be 1 (upwind), 3 or 5 (semi-Lagrangian), got {self.y_advection}")
        if self.store_every < 1:
            raise ConfigError("store_every must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


# ---------------------------------------------------------------------------
# Spatial stencils
# ---------------------------------------------------------------------------


def _second_diff_weights(x: np.ndarray):
    """Three-point second-difference weights at interior nodes 1..nx-2."""
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    wm = 2.0 / (hm * (hm + hp))
    wp = 2.0 / (hp * (hm + hp))
    return wm, wp, hm, hp


def _fd_weights(z: float, nodes: np.ndarray, deriv: int) -> np.ndarray:
    """Finite-difference weights for the ``deriv``-th derivative at ``z``."""
    m = nodes.size
    d = nodes - z
    A = np.vstack([d ** p / math.factorial(p) for p in range(m)])
    b = np.zeros(m)
    b[deriv] = 1.0
    return np.linalg.solve(A, b)


def _gamma_interior(V: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Discrete d2V/dx2 with the operator's three-point stencil; boundary rows are 0."""
    wm, wp, _, _ = _second_diff_weights(x)
    G = np.zeros_like(V)
    G[1:-1] = wm[:, None] * (V[:-2] - V[1:-1]) + wp[:, None] * (V[2:] - V[1:-1])
    return G


def second_derivative_field(surface: PriceSurface) -> np.ndarray:
    """Gamma = d2V/dx2 at every node (units 1/currency).

    Central three-point differences inside, one-sided second-order
    differences (four nodes) on the x boundaries.
    """
    x = surface.grid.x_nodes
    if x.size < 3:
        raise ConfigError("second derivative needs at least 3 x-nodes")
    V = surface.values
    G = _gamma_interior(V, x)
    k = min(4, x.size)
    w0 = _fd_weights(x[0], x[:k], 2)
    wn = _fd_weights(x[-1], x[-k:], 2)
    G[0] = w0 @ V[:k]
    G[-1] = wn @ V[-k:]
    return G


def _convection_mask(x: np.ndarray, r: float, diffusion: np.ndarray) -> np.ndarray:
    """True where central convection keeps both off-diagonals non-negative."""
    wm, wp, hm, hp = _second_diff_weights(x)
    mu = r * x[1:-1]
    d = diffusion[1:-1]
    lo_c = d * wm[:, None] - (mu / (hm + hp))[:, None]
    up_c = d * wp[:, None] + (mu / (hm + hp))[:, None]
    mask = np.ones(diffusion.shape, dtype=bool)
    mask[1:-1] = (lo_c >= 0) & (up_c >= 0)
    return mask


def _stencil(x: np.ndarray, r: float, diffusion: np.ndarray, central: np.ndarray):
    """Off-diagonal weights of the x-operator.

    ``L V_i = lo_i V_{i-1} + up_i V_{i+1} - (lo_i + up_i + r) V_i``.  Where
    ``central`` is False the drift is upwinded in the direction of ``r``.
    """
    wm, wp, hm, hp = _second_diff_weights(x)
    mu = r * x
    lo = np.zeros_like(diffusion)
    up = np.zeros_like(diffusion)
    d = diffusion[1:-1]
    m = mu[1:-1, None]
    c = central[1:-1]
    lo_d = d * wm[:, None]
    up_d = d * wp[:, None]
    lo_central = lo_d - m / (hm + hp)[:, None]
    up_central = up_d + m / (hm + hp)[:, None]
    if r >= 0:
        lo_up, up_up = lo_d, up_d + m / hp[:, None]
    else:
        lo_up, up_up = lo_d - m / hm[:, None], up_d
    lo[1:-1] = np.where(c, lo_central, lo_up)
    up[1:-1] = np.where(c, up_central, up_up)
    # x_max keeps only transport and discount (see module notes)
    return lo, up


def _apply_L(V: np.ndarray, lo: np.ndarray, up: np.ndarray) -> np.ndarray:
    """Undiscounted x-operator; annihilates constants exactly."""
    LV = np.zeros_like(V)
    LV[1:-1] = lo[1:-1] * (V[:-2] - V[1:-1]) + up[1:-1] * (V[2:] - V[1:-1])
    return LV


@dataclass(frozen=True, eq=False)
class OperatorCoefficients:
    """Per-node coefficients of the linear operator for one volatility field."""

    grid: Grid2D
    drift: np.ndarray       # r x_i
    advection: np.ndarray   # x_i, speed of the y-transport
    diffusion: np.ndarray   # 1/2 sigma^2 x_i^2, shape (nx, ny)
    discount: float         # r
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def build(cls, grid: Grid2D, r: float, sigma, central: np.ndarray | None = None):
        x = grid.x_nodes
        sig = np.broadcast_to(np.asarray(sigma, dtype=float), grid.shape)
        if np.any(sig < 0) or not np.all(np.isfinite(sig)):
            raise ConfigError("volatility must be finite and non-negative")
        diffusion = 0.5 * sig * sig * (x * x)[:, None]
        if central is None:
            central = _convection_mask(x, r, diffusion)
        lo, up = _stencil(x, r, diffusion, central)
        return cls(grid, r * x, x.copy(), diffusion, float(r), lo, up)

    def __post_init__(self):
        if np.any(self.diffusion < 0):
            raise ConfigError("diffusion must be >= 0 at every node")
        if np.any(self.advection < 0):
            raise ConfigError("advection speed must be >= 0 (x >= 0)")


# ---------------------------------------------------------------------------
# y-transport
# ---------------------------------------------------------------------------


class _Transport:
    """Explicit backward-in-time transport ``V(t - dt, x, y) ~ V(t, x, y + x dt)``."""

    def __init__(self, grid: Grid2D, dt: float, order: int):
        self.order = order
        ny = grid.ny
        c = grid.x_nodes * dt / grid.dy  # Courant number per x-row
        self.courant = c
        if order == 1:
            self.substeps = max(1, int(math.ceil(c.max() - 1e-12)))
            self.c_sub = (c / self.substeps)[:, None]
            return
        m = order + 1                                      # Lagrange stencil width
        xi = np.arange(ny)[None, :] + c[:, None]           # departure point, index units
        k = np.floor(xi).astype(np.int64)
        start = np.clip(k - (m // 2 - 1), 0, ny - m)
        idx = start[..., None] + np.arange(m)
        w = np.ones(idx.shape)
        for a in range(m):
            for b in range(m):
                if a != b:
                    w[..., a] *= (xi - idx[..., b]) / (idx[..., a] - idx[..., b])
        beyond = xi > ny - 1
        if np.any(beyond):
            # departure above y_max: linear extrapolation from the last two nodes
            f = (xi - (ny - 1))[beyond]
            idx[beyond] = np.array([ny - 2] + [ny - 1] * (m - 1))
            w[beyond] = 0.0
            w[beyond, 0] = -f
            w[beyond, 1] = 1.0 + f
        rows = np.arange(grid.nx)[:, None, None]
        self.flat = [np.ascontiguousarray((rows * ny + idx[..., a:a + 1])[..., 0]) for a in range(m)]
        self.w = [np.ascontiguousarray(w[..., a]) for a in range(m)]

    def __call__(self, V: np.ndarray) -> np.ndarray:
        if self.order > 1:
            v = np.ascontiguousarray(V).ravel()
            out = self.w[0] * v[self.flat[0]]
            for a in range(1, len(self.w)):
                out += self.w[a] * v[self.flat[a]]
            return out
        c = self.c_sub
        for _ in range(self.substeps):
            ghost = 2.0 * V[:, -1:] - V[:, -2:-1]
            Vp = np.concatenate([V[:, 1:], ghost], axis=1)
            V = V + c * (Vp - V)
        return V


# ---------------------------------------------------------------------------
# Theta step
# ---------------------------------------------------------------------------


def _theta_field(theta: float, lo: np.ndarray, up: np.ndarray, dt: float) -> np.ndarray:
    """Per-node theta: rows whose explicit part would lose positivity go implicit."""
    th = np.full(lo.shape, float(theta))
    if theta < 1.0:
        explicit_weight = (1.0 - theta) * dt * (lo + up)
        th[explicit_weight > 1.0] = 1.0
    return th


def _solve_x(th: np.ndarray, lo: np.ndarray, up: np.ndarray, dt: float,
             rhs: np.ndarray, workers: int = 1, level: int | None = None) -> np.ndarray:
    """Solve ``(I - th dt L) V = rhs`` slice by slice (rows x, columns y); L undiscounted."""
    nx, ny = rhs.shape
    a = th * dt
    diag = 1.0 + a * (lo + up)
    sub = -a * lo
    sup = -a * up
    diag[0] = 1.0
    sup[0] = 0.0
    sub[0] = 0.0
    sup[-1] = 0.0
    # stacked slices: column j occupies rows j*nx .. j*nx+nx-1
    ab = np.empty((3, nx * ny))
    ab[0, 0] = 0.0
    ab[0, 1:] = sup.T.ravel()[:-1]
    ab[1] = diag.T.ravel()
    ab[2, :-1] = sub.T.ravel()[1:]
    ab[2, -1] = 0.0
    b = rhs.T.ravel()

    def run(j0: int, j1: int) -> np.ndarray:
        s, e = j0 * nx, j1 * nx
        try:
            return solve_banded((1, 1), ab[:, s:e], b[s:e], check_finite=False)
        except (LinAlgError, ValueError):
            for j in range(j0, j1):
                try:
                    solve_banded((1, 1), ab[:, j * nx:(j + 1) * nx], b[j * nx:(j + 1) * nx])
                except (LinAlgError, ValueError):
                    raise SingularSystemError(j, level) from None
            raise

    if workers <= 1 or ny < 2 * workers:
        out = run(0, ny)
    else:
        bounds = np.linspace(0, ny, workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds[:-1], bounds[1:]))
        out = np.concatenate(parts)
    return out.reshape(ny, nx).T.copy()


def step_backward(surface_next: PriceSurface, coeffs: OperatorCoefficients,
                  source: PriceSurface | np.ndarray | None = None,
                  scheme: SchemeConfig = SchemeConfig(), dt: float | None = None, *,
                  source_next: PriceSurface | np.ndarray | None = None,
                  theta: float | None = None) -> PriceSurface:
    """One backward step of ``L(sigma) V + f = 0`` with a frozen volatility.

    ``source`` is ``f`` at the new (earlier) level and ``source_next`` at the
    known level; when only ``source`` is given it is used for both.
    """
    if dt is None or not dt > 0:
        raise ConfigError("dt must be > 0")
    grid = surface_next.grid
    if not coeffs.grid.same_as(grid):
        raise ConfigError("coefficients and surface use different grids")
    f_new = _as_field(source, grid)
    f_old = _as_field(source_next, grid) if source_next is not None else f_new
    th = scheme.theta if theta is None else theta
    transport = _Transport(grid, dt, scheme.y_advection)
    r = coeffs.discount
    th_f = _theta_field(th, coeffs.lower, coeffs.upper, dt)
    disc = math.exp(-r * dt)
    rhs = _rhs(surface_next.values, transport, th_f, coeffs.lower, coeffs.upper, dt, disc, f_new, f_old)
    Vn = disc * _solve_x(th_f, coeffs.lower, coeffs.upper, dt, rhs, scheme.workers)
    if not np.all(np.isfinite(Vn)):
        raise NonFiniteError(-1, surface_next.t - dt)
    return PriceSurface(grid, Vn, surface_next.t - dt)


def _as_field(src, grid: Grid2D):
    if src is None:
        return None
    arr = src.values if isinstance(src, PriceSurface) else np.asarray(src, dtype=float)
    arr = np.broadcast_to(arr, grid.shape)
    return arr


def _rhs(V, transport, th, lo, up, dt, disc, f_new, f_old):
    """Right-hand side for the undiscounted unknown ``V_new / disc``.

    The explicit half of the theta-step is taken at the departure point of
    the y-characteristic (it is transported together with ``V``), which keeps
    the split step second order in time for ``theta = 1/2``.
    """
    E = V + ((1.0 - th) * dt) * _apply_L(V, lo, up)
    if f_old is not None:
        E += ((1.0 - th) * dt) * f_old
    rhs = transport(E)
    if f_new is not None:
        rhs += (th * dt / disc) * f_new
    return rhs


# ---------------------------------------------------------------------------
# Backward march shared by V0, V1 and the BSB solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolicyIterConfig:
    """Howard iteration controls for the pointwise sup over the band."""

    tol: float = 1e-9
    max_iters: int = 50
    dead_band: float = 0.0

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("policy tol must be > 0")
        if self.max_iters < 1:
            raise ConfigError("policy max_iters must be >= 1")
        if self.dead_band < 0:
            raise ConfigError("dead_band must be >= 0")


def _policy(G: np.ndarray, dead_band: float, previous: np.ndarray | None) -> np.ndarray:
    g = G >= 0.0
    if dead_band > 0 and previous is not None:
        g = np.where(np.abs(G) <= dead_band, previous, g)
    return g


def _march(grid: Grid2D, tgrid: TimeGrid, scheme: SchemeConfig, r: float, terminal: np.ndarray,
           sigma_lo: float, sigma_hi: float, pcfg: PolicyIterConfig = PolicyIterConfig(), *,
           source: Callable[[int], np.ndarray] | None = None, want_control: bool = False):
    """March from ``T`` to 0 maximising over ``sigma in {sigma_lo, sigma_hi}`` per node.

    Returns ``(SurfaceSeries, ControlField | None)``.  With ``sigma_lo ==
    sigma_hi`` this is a plain linear solve (every policy loop stops after one
    tridiagonal solve).
    """
    x = grid.x_nodes
    n = tgrid.n_steps
    dt = tgrid.dt
    transport = _Transport(grid, dt, scheme.y_advection)
    disc = math.exp(-r * dt)
    # convection upwinding is fixed by the smallest volatility so that the
    # operator depends on sigma only through 1/2 sigma^2 x^2 Gamma
    central = _convection_mask(x, r, 0.5 * sigma_lo ** 2 * np.broadcast_to((x * x)[:, None], grid.shape))
    x2 = np.broadcast_to((x * x)[:, None], grid.shape)
    lo_l, up_l = _stencil(x, r, 0.5 * sigma_lo * sigma_lo * x2, central)
    lo_h, up_h = _stencil(x, r, 0.5 * sigma_hi * sigma_hi * x2, central)

    def coefficients(gamma: np.ndarray):
        return np.where(gamma, lo_h, lo_l), np.where(gamma, up_h, up_l)

    stored = sorted(set(range(0, n + 1, scheme.store_every)) | {0, n})
    slot = {k: s for s, k in enumerate(stored)}
    data = np.empty((len(stored), grid.nx, grid.ny))
    masks = np.empty((len(stored), grid.nx, grid.ny), dtype=np.uint8) if want_control else None

    V = np.array(np.broadcast_to(terminal, grid.shape), dtype=float)
    data[slot[n]] = V
    if want_control:
        masks[slot[n]] = second_derivative_field(PriceSurface(grid, V, tgrid.T)) >= 0.0
    f_old = source(n) if source is not None else None
    g_prev = None
    iters = np.zeros(n + 1, dtype=np.int64)

    for k in range(n - 1, -1, -1):
        step_no = n - 1 - k
        th = 1.0 if step_no < scheme.rannacher_steps else scheme.theta
        t_k = tgrid.time(k)
        g_exp = _policy(_gamma_interior(V, x), pcfg.dead_band, g_prev)
        lo_e, up_e = coefficients(g_exp)
        th_f = _theta_field(th, lo_e, up_e, dt)
        f_new = source(k) if source is not None else None
        rhs = _rhs(V, transport, th_f, lo_e, up_e, dt, disc, f_new, f_old)

        g = g_exp
        V_prev = None
        for it in range(1, pcfg.max_iters + 1):
            lo_i, up_i = coefficients(g)
            Vn = disc * _solve_x(th_f, lo_i, up_i, dt, rhs, scheme.workers, level=k)
            if not np.all(np.isfinite(Vn)):
                raise NonFiniteError(k, t_k)
            if sigma_lo == sigma_hi:
                break
            g_new = _policy(_gamma_interior(Vn, x), pcfg.dead_band, g)
            if np.array_equal(g_new, g):
                break
            if V_prev is not None:
                resid = float(np.max(np.abs(Vn - V_prev))) / max(1.0, float(np.max(np.abs(Vn))))
                if resid < pcfg.tol:
                    break
            else:
                resid = math.inf
            V_prev, g = Vn, g_new
        else:
            raise PolicyIterationError(k, t_k, resid, pcfg.max_iters)
        iters[k] = it
        V, f_old, g_prev = Vn, f_new, g
        if k in slot:
            data[slot[k]] = V
            if want_control:
                masks[slot[k]] = second_derivative_field(PriceSurface(grid, V, t_k)) >= 0.0

    stats = {
        "policy_iters": iters,
        "max_policy_iters": int(iters[:n].max()) if n else 0,
        "transport_substeps": getattr(transport, "substeps", 1),
    }
    series = SurfaceSeries(grid, tgrid, data, np.array(stored), stats)
    control = None
    if want_control:
        control = ControlField(grid, series.times, masks, sigma_lo, sigma_hi)
    return series, control


def terminal_values(payoff: Payoff, grid: Grid2D, T: float) -> np.ndarray:
    """``phi(y / T)`` broadcast over x."""
    return np.broadcast_to(np.asarray(payoff(grid.y_nodes / T))[None, :], grid.shape)


def solve_v0(params: ModelParams, payoff: Payoff, grid: Grid2D, tgrid: TimeGrid,
             scheme: SchemeConfig = SchemeConfig()) -> SurfaceSeries:
    """Constant-volatility (sigma0) Asian price on every stored time level."""
    grid.validate_for(params)
    if not np.isclose(tgrid.T, params.T, rtol=1e-12):
        raise ConfigError("time grid maturity does not match the model")
    SOLVE_COUNTER["linear"] += 1
    s = params.sigma0
    series, _ = _march(grid, tgrid, scheme, params.r, terminal_values(payoff, grid, params.T), s, s)
    logger.debug("solve_v0 sigma=%g grid=%s steps=%d", s, grid.shape, tgrid.n_steps)
    return series
