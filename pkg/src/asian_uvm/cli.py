"""Command-line entry point: ``asian-uvm <verb> [--config PATH] [overrides]``.

Exit status: 0 success, 1 a validation check failed, 2 configuration error,
3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bsb import solve_bsb
from .config import RunConfig, config_from_dict, load_config
from .correction import gamma_bar_field, solve_v1
from .errors import ConfigError, SolverError
from .harness import format_checks, run_sweep, run_validate
from .io import append_jsonl, read_control_csv, write_control_csv, write_node_csv
from .mc import price_constant_vol, price_worst_case
from .pde_linear import second_derivative_field, solve_v0

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("asian_uvm")


def _grid_arg(text: str) -> tuple:
    try:
        nx, ny, nt = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected NX,NY,NT") from None
    return nx, ny, nt


def _eps_arg(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected a number or comma-separated list") from None


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="asian-uvm", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML run configuration (defaults if omitted)")
    common.add_argument("--eps", type=_eps_arg, help="band width, or a descending list for sweep")
    common.add_argument("--grid", type=_grid_arg, metavar="NX,NY,NT")
    common.add_argument("--seed", type=int, help="Monte Carlo seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--workers", type=int, help="threads for x-solves and MC blocks")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="verb", required=True)
    sub.add_parser("price-v0", parents=[common], help="constant-volatility price")
    sub.add_parser("price-v1", parents=[common], help="first-order correction")
    p = sub.add_parser("price-bsb", parents=[common], help="worst-case price and control")
    p.add_argument("--gzip", action="store_true", help="compress the control file")
    p = sub.add_parser("mc", parents=[common], help="Monte Carlo price")
    p.add_argument("--control", type=Path, help="control CSV from price-bsb (worst-case paths)")
    p.add_argument("--sigma", type=float, help="constant volatility (default sigma0)")
    sub.add_parser("sweep", parents=[common], help="band-width sweep report")
    p = sub.add_parser("validate", parents=[common], help="cross-check table")
    p.add_argument("--only", help="comma-separated subset of checks")
    return ap


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    cfg = cfg.with_overrides(eps=args.eps, grid=args.grid, seed=args.seed, out=args.out)
    if args.workers:
        cfg = replace(cfg, scheme=replace(cfg.scheme, workers=args.workers),
                      mc=replace(cfg.mc, workers=args.workers))
    return cfg


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


def _fmt(v: float) -> str:
    return "%.17g" % v


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_price_v0(cfg: RunConfig, args) -> int:
    p = cfg.params
    grid, tgrid = cfg.grid.build(p)
    v0 = solve_v0(p, cfg.payoff, grid, tgrid, cfg.scheme)
    out = _out_dir(cfg)
    write_node_csv(out / "v0_surface.csv", v0[0].values)
    write_node_csv(out / "v0_gamma.csv", second_derivative_field(v0[0]))
    _emit({"verb": "price-v0", "price": _fmt(v0.price(p.x0, p.y0))})
    return EXIT_OK


def cmd_price_v1(cfg: RunConfig, args) -> int:
    p = cfg.params
    grid, tgrid = cfg.grid.build(p)
    v0 = solve_v0(p, cfg.payoff, grid, tgrid, replace(cfg.scheme, store_every=1))
    gbar = gamma_bar_field(v0, p)
    v1 = solve_v1(p, v0, gbar, grid, tgrid, cfg.scheme)
    out = _out_dir(cfg)
    write_node_csv(out / "v1_surface.csv", v1[0].values)
    write_control_csv(out / "gamma_bar.csv", gbar)
    _emit({"verb": "price-v1", "v0": _fmt(v0.price(p.x0, p.y0)), "v1": _fmt(v1.price(p.x0, p.y0))})
    return EXIT_OK


def cmd_price_bsb(cfg: RunConfig, args) -> int:
    p = cfg.params
    grid, tgrid = cfg.grid.build(p)
    res = solve_bsb(p, cfg.payoff, grid, tgrid, cfg.scheme, cfg.policy)
    out = _out_dir(cfg)
    write_node_csv(out / "bsb_surface.csv", res.levels[0].values)
    ctrl = out / ("control.csv.gz" if args.gzip else "control.csv")
    write_control_csv(ctrl, res.control)
    _emit({"verb": "price-bsb", "eps": _fmt(p.eps), "price": _fmt(res.levels.price(p.x0, p.y0)),
           "max_policy_iters": res.max_policy_iters, "control": str(ctrl)})
    return EXIT_OK


def cmd_mc(cfg: RunConfig, args) -> int:
    p = cfg.params
    if args.control is not None:
        res = price_worst_case(p, cfg.payoff, read_control_csv(args.control), cfg.mc)
        kind = "worst_case"
    else:
        res = price_constant_vol(p, args.sigma if args.sigma is not None else p.sigma0, cfg.payoff, cfg.mc)
        kind = "constant_vol"
    record = json.loads(res.to_json())
    append_jsonl(_out_dir(cfg) / "mc.jsonl", record)
    _emit(dict(record, verb="mc", kind=kind))
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    report = run_sweep(cfg)
    print(report.csv_path.read_text(), end="")
    log.info("figure written to %s", report.figure_path)
    return EXIT_OK


def cmd_validate(cfg: RunConfig, args) -> int:
    only = args.only.split(",") if args.only else None
    checks = run_validate(cfg, only)
    text = format_checks(checks)
    (_out_dir(cfg) / "validate.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK


COMMANDS = {
    "price-v0": cmd_price_v0,
    "price-v1": cmd_price_v1,
    "price-bsb": cmd_price_bsb,
    "mc": cmd_mc,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        return COMMANDS[args.verb](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
