"""Run configuration read from a TOML file.

Every table and key is optional; omitted values take the defaults of the
corresponding dataclass.  Example::

    [model]
    r = 0.05
    sigma0 = 0.2
    T = 1.0
    x0 = 100.0

    [payoff]
    kind = "butterfly"          # call | put | butterfly | constant | linear | piecewise
    strikes = [90.0, 100.0, 110.0]
    mollify = 1.0

    [grid]
    nx = 201
    ny = 201
    nt = 500

    [sweep]
    eps_list = [0.2, 0.1, 0.05, 0.025]
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import Grid2D, ModelParams, Payoff, TimeGrid
from .errors import ConfigError
from .mc import MCConfig
from .pde_linear import PolicyIterConfig, SchemeConfig


@dataclass(frozen=True)
class GridSpec:
    nx: int = 201
    ny: int = 201
    nt: int = 500
    x_mult: float = 4.0
    stretch: float = 0.0

    def __post_init__(self):
        if min(self.nx, self.ny) < 4 or self.nt < 1:
            raise ConfigError("grid needs nx, ny >= 4 and nt >= 1")

    def build(self, params: ModelParams) -> tuple:
        return (Grid2D.for_params(params, self.nx, self.ny, self.x_mult, self.stretch),
                TimeGrid(params.T, self.nt))


@dataclass(frozen=True)
class ValidateSpec:
    strike: float | None = None      # call/put strike for the identity checks, default x0
    vega_h: float = 1e-3
    order_tol: float = 1.7
    order_err_tol: float = 5e-3      # max extrapolated relative error of the configured grid
    mc_paths: int | None = None      # overrides mc.n_paths for the validation runs


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    payoff: Payoff
    grid: GridSpec = GridSpec()
    scheme: SchemeConfig = SchemeConfig()
    policy: PolicyIterConfig = PolicyIterConfig()
    mc: MCConfig = MCConfig()
    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    output_dir: Path = Path("out")
    validate: ValidateSpec = ValidateSpec()
    source: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        if not eps:
            raise ConfigError("eps_list must not be empty")
        if any(e <= 0 for e in eps):
            raise ConfigError("eps_list entries must be > 0")
        if any(a <= b for a, b in zip(eps, eps[1:])):
            raise ConfigError("eps_list must be strictly decreasing")
        object.__setattr__(self, "eps_list", eps)

    def with_overrides(self, eps=None, grid=None, seed=None, out=None) -> "RunConfig":
        cfg = self
        if eps is not None:
            # the first value sets the single-solve band; an all-positive list also
            # replaces the sweep (eps = 0 is valid for one solve, not for a sweep)
            eps = tuple(eps)
            cfg = replace(cfg, params=cfg.params.with_eps(eps[0]))
            if all(e > 0 for e in eps):
                cfg = replace(cfg, eps_list=eps)
        if grid is not None:
            nx, ny, nt = grid
            cfg = replace(cfg, grid=replace(cfg.grid, nx=nx, ny=ny, nt=nt))
        if seed is not None:
            cfg = replace(cfg, mc=replace(cfg.mc, seed=seed))
        if out is not None:
            cfg = replace(cfg, output_dir=Path(out))
        return cfg


def _build(cls, table: dict, section: str):
    names = {f.name for f in fields(cls)}
    for key in table:
        if key not in names:
            raise ConfigError(f"unknown key [{section}].{key}")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def payoff_from_dict(d: dict) -> Payoff:
    d = dict(d)
    kind = d.pop("kind", "call")
    delta = float(d.pop("mollify", 0.0))
    try:
        if kind in ("call", "put"):
            k = float(d.pop("strike"))
            p = Payoff.call(k, delta) if kind == "call" else Payoff.put(k, delta)
        elif kind == "butterfly":
            lo, mid, hi = (float(v) for v in d.pop("strikes"))
            p = Payoff.butterfly(lo, mid, hi, delta)
        elif kind == "constant":
            p = Payoff.constant(float(d.pop("level", 1.0)))
        elif kind == "linear":
            p = Payoff.linear(float(d.pop("slope", 1.0)), float(d.pop("intercept", 0.0)))
        elif kind == "piecewise":
            p = Payoff(tuple(map(float, d.pop("breakpoints"))), tuple(map(float, d.pop("values"))),
                       float(d.pop("left_slope", 0.0)), float(d.pop("right_slope", 0.0)), delta)
        else:
            raise ConfigError(f"unknown payoff kind {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"payoff kind {kind!r} needs key {exc}") from None
    if d:
        raise ConfigError(f"unknown payoff keys for kind {kind!r}: {sorted(d)}")
    return p


_SECTIONS = {"model", "payoff", "grid", "scheme", "policy", "mc", "sweep", "output", "validate"}


def config_from_dict(data: dict, source: Path | None = None) -> RunConfig:
    unknown = set(data) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    model = dict(data.get("model", {}))
    model.setdefault("r", 0.05)
    model.setdefault("sigma0", 0.2)
    model.setdefault("eps", 0.0)
    model.setdefault("T", 1.0)
    params = _build(ModelParams, model, "model")
    payoff_d = dict(data.get("payoff", {"kind": "call"}))
    if payoff_d.get("kind", "call") in ("call", "put"):
        payoff_d.setdefault("strike", params.x0)
    sweep = dict(data.get("sweep", {}))
    eps_list = tuple(sweep.pop("eps_list", (0.2, 0.1, 0.05, 0.025)))
    if sweep:
        raise ConfigError(f"unknown key(s) in [sweep]: {sorted(sweep)}")
    out = dict(data.get("output", {}))
    out_dir = Path(out.pop("dir", "out"))
    if out:
        raise ConfigError(f"unknown key(s) in [output]: {sorted(out)}")
    if source is not None and not out_dir.is_absolute():
        out_dir = source.parent / out_dir
    return RunConfig(
        params=params,
        payoff=payoff_from_dict(payoff_d),
        grid=_build(GridSpec, data.get("grid", {}), "grid"),
        scheme=_build(SchemeConfig, data.get("scheme", {}), "scheme"),
        policy=_build(PolicyIterConfig, data.get("policy", {}), "policy"),
        mc=_build(MCConfig, data.get("mc", {}), "mc"),
        eps_list=eps_list,
        output_dir=out_dir,
        validate=_build(ValidateSpec, data.get("validate", {}), "validate"),
        source=source,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, path)
