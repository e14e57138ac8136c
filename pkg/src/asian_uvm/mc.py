"""Monte Carlo pricing of the arithmetic-average payoff.

Paths are generated in fixed-size blocks.  Each block draws from its own
Philox stream keyed by ``(seed, block index)``, so results do not depend on
how blocks are scheduled across threads.  Per-path values are written back in
path order and reduced with numpy's pairwise summation.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .core import ControlField, ModelParams, Payoff
from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MCConfig:
    n_paths: int = 1_000_000
    n_steps: int = 500
    seed: int = 12345
    antithetic: bool = True
    block_size: int = 65536
    workers: int = 1

    def __post_init__(self):
        if self.n_paths < 2:
            raise ConfigError("n_paths must be >= 2")
        if self.n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.antithetic and (self.n_paths % 2 or self.block_size % 2):
            raise ConfigError("antithetic sampling needs even n_paths and block_size")
        if self.block_size < 2:
            raise ConfigError("block_size must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass(frozen=True)
class MCResult:
    price: float
    stderr: float
    n_paths: int
    seed: int

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("standard error must be >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def within(self, target: float, n_se: float = 3.0, extra: float = 0.0) -> bool:
        return abs(self.price - target) <= n_se * self.stderr + extra


def _advance(X: np.ndarray, sigma, drift_dt: float, sqdt: float, z: np.ndarray, r: float) -> np.ndarray:
    # exact for constant sigma over the step, log-Euler otherwise
    return X * np.exp((r - 0.5 * sigma * sigma) * drift_dt + sigma * sqdt * z)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(seed << 64) | block))


def _simulate(params: ModelParams, payoff: Payoff, mc: MCConfig, sigma_of) -> MCResult:
    """``sigma_of(k, X, Y)`` returns the volatility used on step k (scalar or array)."""
    T, r = params.T, params.r
    n = mc.n_steps
    dt = T / n
    sqdt = math.sqrt(dt)
    n_blocks = -(-mc.n_paths // mc.block_size)
    anti = mc.antithetic
    n_samples = mc.n_paths // 2 if anti else mc.n_paths
    samples = np.empty(n_samples)

    def run(b: int) -> None:
        start = b * mc.block_size
        size = min(mc.block_size, mc.n_paths - start)
        m = size // 2 if anti else size
        rng = _block_rng(mc.seed, b)
        X = np.full(size, float(params.x0))
        Y = np.full(size, float(params.y0))
        for k in range(n):
            z = rng.standard_normal(m)
            if anti:
                z = np.concatenate([z, -z])
            X_new = _advance(X, sigma_of(k, X, Y), dt, sqdt, z, r)
            Y += 0.5 * (X + X_new) * dt
            X = X_new
        f = payoff(Y / T)
        lo = start // 2 if anti else start
        samples[lo:lo + m] = 0.5 * (f[:m] + f[m:]) if anti else f

    if mc.workers > 1:
        with ThreadPoolExecutor(max_workers=mc.workers) as pool:
            list(pool.map(run, range(n_blocks)))
    else:
        for b in range(n_blocks):
            run(b)

    disc = math.exp(-r * T)
    mean = float(np.mean(samples))
    sd = float(np.std(samples, ddof=1)) if n_samples > 1 else 0.0
    return MCResult(disc * mean, disc * sd / math.sqrt(n_samples), mc.n_paths, mc.seed)


def price_constant_vol(params: ModelParams, sigma: float, payoff: Payoff, mc: MCConfig) -> MCResult:
    """Discounted mean of ``phi(A)`` under constant volatility ``sigma``."""
    if not sigma > 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    sigma = float(sigma)
    res = _simulate(params, payoff, mc, lambda k, X, Y: sigma)
    logger.debug("constant-vol MC sigma=%g: %s", sigma, res)
    return res


def price_worst_case(params: ModelParams, payoff: Payoff, control: ControlField, mc: MCConfig) -> MCResult:
    """Simulate the feedback volatility ``sigma0 + eps * gamma(t, X, Y)``.

    ``gamma`` comes from the nearest stored control level (by time) and the
    nearest grid node; paths that leave the grid use the closest edge node.
    """
    if control.times[0] > 1e-12 or control.times[-1] < params.T * (1 - 1e-12):
        raise ConfigError("control field must cover [0, T]")
    lo, hi = params.sigma0, params.sigma_hi
    dt = params.T / mc.n_steps
    levels = control.nearest_level(np.arange(mc.n_steps) * dt)

    def sigma_of(k, X, Y):
        return np.where(control.lookup(int(levels[k]), X, Y) == 1, hi, lo)

    res = _simulate(params, payoff, mc, sigma_of)
    logger.debug("worst-case MC eps=%g: %s", params.eps, res)
    return res
