"""Orchestration: the band-width sweep and the cross-check table."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .bsb import expansion_error, solve_bsb
from .config import RunConfig
from .core import Grid2D, ModelParams, Payoff, TimeGrid
from .correction import gamma_bar_field, solve_v1
from .errors import AsianUVMError, SolverError
from .mc import MCConfig, price_constant_vol, price_worst_case
from .pde_linear import SOLVE_COUNTER, solve_v0

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ("eps", "v_eps", "v0", "v1", "expansion_R", "max_policy_iters", "wall_time_s")
TIMING_COLUMNS = ("wall_time_s",)


class SweepError(SolverError):
    def __init__(self, eps: float, cause: Exception):
        self.eps = eps
        super().__init__(f"sweep aborted at eps={eps:g}: {cause}")


@dataclass(frozen=True)
class SweepRow:
    eps: float
    v_eps: float
    v0: float
    v1: float
    expansion_R: float
    max_policy_iters: int
    wall_time_s: float


@dataclass
class SweepReport:
    rows: list
    solve_counts: dict = field(default_factory=dict)
    csv_path: Path | None = None
    figure_path: Path | None = None

    @property
    def ratios(self) -> list:
        return [r.expansion_R for r in self.rows]

    def r_strictly_decreasing(self) -> bool:
        # rows are in descending eps order, so R must fall row by row
        return all(a > b for a, b in zip(self.ratios, self.ratios[1:]))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for r in self.rows:
                w.writerow([_f(r.eps), _f(r.v_eps), _f(r.v0), _f(r.v1), _f(r.expansion_R),
                            r.max_policy_iters, "%.3f" % r.wall_time_s])
        return path


def _f(v: float) -> str:
    return "%.17g" % v


def run_sweep(cfg: RunConfig, write: bool = True) -> SweepReport:
    """V0 and V1 once, then one worst-case solve per band width."""
    p = cfg.params
    grid, tgrid = cfg.grid.build(p)
    full = replace(cfg.scheme, store_every=1)
    before = SOLVE_COUNTER.copy()
    v0 = solve_v0(p, cfg.payoff, grid, tgrid, full)
    gbar = gamma_bar_field(v0, p)
    v1 = solve_v1(p, v0, gbar, grid, tgrid, cfg.scheme)
    v0_0, v1_0 = v0[0], v1[0]
    rows = []
    for eps in cfg.eps_list:
        t0 = time.perf_counter()
        try:
            res = solve_bsb(p.with_eps(eps), cfg.payoff, grid, tgrid, cfg.scheme, cfg.policy)
        except AsianUVMError as exc:
            raise SweepError(eps, exc) from exc
        v_eps = res.levels[0]
        rows.append(SweepRow(eps, v_eps.value_at(p.x0, p.y0), v0_0.value_at(p.x0, p.y0),
                             v1_0.value_at(p.x0, p.y0), expansion_error(v_eps, v0_0, v1_0, eps, p.x0, p.y0),
                             res.max_policy_iters, time.perf_counter() - t0))
        logger.info("eps=%g V_eps=%.10g R=%.4e", eps, rows[-1].v_eps, rows[-1].expansion_R)
    counts = {k: SOLVE_COUNTER[k] - before.get(k, 0) for k in ("linear", "bsb")}
    if counts != {"linear": 2, "bsb": len(cfg.eps_list)}:
        raise SolverError(f"unexpected solve counts {counts}")
    report = SweepReport(rows, counts)
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.csv_path = report.write_csv(out / "sweep.csv")
        from .plotting import plot_sweep

        report.figure_path = plot_sweep(report, out / "sweep.png")
    return report


# ---------------------------------------------------------------------------
# Validation checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict:4s}  {self.name:22s} value={self.value:.6g} tol={self.tolerance:.3g}  {self.detail}"


def asian_forward(params: ModelParams) -> float:
    """Risk-neutral mean of the terminal average ``E[A_T]``."""
    r, T, x0 = params.r, params.T, params.x0
    growth = x0 * T if r == 0 else x0 * math.expm1(r * T) / r
    return (params.y0 + growth) / T


def aitken_factor(v1: float, v2: float, v3: float) -> tuple:
    """Error reduction factor and extrapolated limit of a three-level sequence."""
    d1, d2 = v1 - v2, v2 - v3
    factor = abs(d1) / abs(d2) if d2 != 0 else math.inf
    limit = v3 - d2 * d2 / (d1 - d2) if d1 != d2 else v3
    return factor, limit


def refinement_levels(n: int) -> tuple:
    return ((n - 1) // 2 + 1, n, 2 * n - 1)


def _strike(cfg: RunConfig) -> float:
    return cfg.validate.strike if cfg.validate.strike is not None else cfg.params.x0


def _mc(cfg: RunConfig) -> MCConfig:
    if cfg.validate.mc_paths is None:
        return cfg.mc
    return replace(cfg.mc, n_paths=cfg.validate.mc_paths)


def _solve(params, payoff, grid, tgrid, scheme):
    return solve_v0(params, payoff, grid, tgrid, scheme).price(params.x0, params.y0)


def check_pde_vs_mc(cfg, grid, tgrid):
    p = cfg.params
    call = Payoff.call(_strike(cfg))
    v0 = _solve(p, call, grid, tgrid, cfg.scheme)
    mc = price_constant_vol(p, p.sigma0, call, _mc(cfg))
    err = abs(v0 - mc.price) / mc.stderr
    return Check("pde_vs_mc", err, 3.0, err <= 3.0, f"V0={v0:.6f} MC={mc.price:.6f}+-{mc.stderr:.2g}")


def check_parity(cfg, grid, tgrid):
    p = cfg.params
    k = _strike(cfg)
    c = _solve(p, Payoff.call(k), grid, tgrid, cfg.scheme)
    pt = _solve(p, Payoff.put(k), grid, tgrid, cfg.scheme)
    target = math.exp(-p.r * p.T) * (asian_forward(p) - k)
    denom = abs(target) if abs(target) > 1e-12 * p.x0 else max(abs(c), 1.0)
    rel = abs(c - pt - target) / denom
    return Check("put_call_parity", rel, 5e-4, rel <= 5e-4, f"C-P={c - pt:.8f} target={target:.8f}")


def check_discount(cfg, grid, tgrid):
    p = cfg.params
    v = _solve(p, Payoff.constant(1.0), grid, tgrid, cfg.scheme)
    target = math.exp(-p.r * p.T)
    ratio = v / target
    return Check("discount_identity", ratio, 1e-8, abs(ratio - 1.0) <= 1e-8,
                 f"V={v:.12f} exp(-rT)={target:.12f}")


def check_vega(cfg, grid, tgrid):
    p = cfg.params
    call = Payoff.call(_strike(cfg))
    h = cfg.validate.vega_h
    full = replace(cfg.scheme, store_every=1)
    v0 = solve_v0(p, call, grid, tgrid, full)
    v1 = solve_v1(p, v0, None, grid, tgrid, cfg.scheme).price(p.x0, p.y0)
    up = _solve(p.with_sigma0(p.sigma0 + h), call, grid, tgrid, cfg.scheme)
    dn = _solve(p.with_sigma0(p.sigma0 - h), call, grid, tgrid, cfg.scheme)
    fd = (up - dn) / (2 * h)
    rel = abs(v1 - fd) / abs(fd)
    return Check("vega_identity", rel, 0.01, rel <= 0.01, f"V1={v1:.6f} dV0/dsigma={fd:.6f}")


def _band_eps(cfg) -> float:
    return cfg.params.eps if cfg.params.eps > 0 else cfg.eps_list[0]


def check_dominance(cfg, grid, tgrid):
    p = cfg.params
    eps = _band_eps(cfg)
    res = solve_bsb(p.with_eps(eps), cfg.payoff, grid, tgrid, cfg.scheme, cfg.policy)
    v_eps = res.levels.price(p.x0, p.y0)
    consts = [_solve(p.with_sigma0(s), cfg.payoff, grid, tgrid, cfg.scheme)
              for s in (p.sigma0, p.sigma0 + eps / 2, p.sigma0 + eps)]
    scale = res.levels[0].scale
    margin = v_eps - max(consts)
    tol = 1e-6 * scale
    return Check("dominance", margin, tol, margin >= -tol,
                 f"V_eps={v_eps:.6f} max const-vol={max(consts):.6f}")


def check_worst_case_mc(cfg, grid, tgrid):
    p = cfg.params
    eps = _band_eps(cfg)
    pe = p.with_eps(eps)
    v0 = _solve(p, cfg.payoff, grid, tgrid, cfg.scheme)
    levels, control = solve_bsb(pe, cfg.payoff, grid, tgrid, cfg.scheme, cfg.policy)
    v_eps = levels.price(p.x0, p.y0)
    mc = price_worst_case(pe, cfg.payoff, control, _mc(cfg))
    lo = v0 - 3 * mc.stderr
    hi = v_eps + 3 * mc.stderr + 0.002 * abs(v_eps)
    ok = lo <= mc.price <= hi
    return Check("worst_case_mc", mc.price, mc.stderr, ok,
                 f"window=[{lo:.6f}, {hi:.6f}] V_eps={v_eps:.6f}")


def check_martingale(cfg, grid, tgrid):
    p = replace(cfg.params, r=0.0)
    mc = price_constant_vol(p, p.sigma0, Payoff.linear(1.0), _mc(cfg))
    target = asian_forward(p)
    z = abs(mc.price - target) / mc.stderr if mc.stderr > 0 else 0.0
    return Check("martingale", z, 3.0, z <= 3.0, f"MC={mc.price:.6f} target={target:.6f}")


def check_order(cfg, grid, tgrid):
    p = cfg.params
    call = Payoff.call(_strike(cfg))
    g = cfg.grid
    scale_t = g.nt / (g.nx - 1)
    vals = []
    for n in refinement_levels(g.nx):
        ny = round((g.ny - 1) * (n - 1) / (g.nx - 1)) + 1
        gr = Grid2D.for_params(p, n, ny, g.x_mult, g.stretch)
        tg = TimeGrid(p.T, max(1, round(scale_t * (n - 1))))
        vals.append(_solve(p, call, gr, tg, cfg.scheme))
    factor, limit = aitken_factor(*vals)
    tol = cfg.validate.order_tol
    # the factor alone can look healthy far from the asymptotic range, so the
    # extrapolated error of the configured grid must also be small
    est = abs(vals[1] - limit) / max(abs(limit), 1e-12)
    ok = factor >= tol and est <= cfg.validate.order_err_tol
    return Check("convergence_order", factor, tol, ok,
                 "levels=" + "/".join(f"{v:.6f}" for v in vals)
                 + f" limit={limit:.6f} est_rel_err={est:.2e}")


CHECKS = {
    "pde_vs_mc": check_pde_vs_mc,
    "put_call_parity": check_parity,
    "discount_identity": check_discount,
    "vega_identity": check_vega,
    "dominance": check_dominance,
    "worst_case_mc": check_worst_case_mc,
    "martingale": check_martingale,
    "convergence_order": check_order,
}


def run_validate(cfg: RunConfig, only: list | None = None) -> list:
    """Run the named checks (all by default); failures never raise."""
    grid, tgrid = cfg.grid.build(cfg.params)
    out = []
    for name, fn in CHECKS.items():
        if only is not None and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            chk = fn(cfg, grid, tgrid)
        except (AsianUVMError, FloatingPointError, np.linalg.LinAlgError) as exc:
            chk = Check(name, math.nan, math.nan, False, f"error: {exc}")
        logger.info("%s (%.1fs)", chk.line(), time.perf_counter() - t0)
        out.append(chk)
    return out


def format_checks(checks: list) -> str:
    return "\n".join(c.line() for c in checks)
