import csv
import json
import math
from dataclasses import replace
from pathlib import Path

import pytest

from asian_uvm.cli import main
from asian_uvm.config import config_from_dict
from asian_uvm.harness import (TIMING_COLUMNS, Check, SweepError, aitken_factor, asian_forward,
                               refinement_levels, run_sweep, run_validate)
from asian_uvm.io import read_node_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = {
    "model": {"r": 0.05, "sigma0": 0.2, "eps": 0.1, "T": 1.0},
    "payoff": {"kind": "butterfly", "strikes": [90.0, 100.0, 110.0], "mollify": 1.0},
    "grid": {"nx": 41, "ny": 41, "nt": 40},
    "mc": {"n_paths": 20000, "n_steps": 40, "seed": 3},
}


def _toml(path, data):
    lines = []
    for sec, table in data.items():
        lines.append(f"[{sec}]")
        for k, v in table.items():
            lines.append(f"{k} = {json.dumps(v)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _sweep_rows(path):
    with open(path) as fh:
        return [{k: v for k, v in row.items() if k not in TIMING_COLUMNS} for row in csv.DictReader(fh)]


def test_zero_payoff_sweep(tmp_path):
    cfg = config_from_dict(dict(SMALL, payoff={"kind": "constant", "level": 0.0}, output={"dir": str(tmp_path)}))
    rep = run_sweep(cfg)
    assert all(r.v_eps == r.v0 == r.v1 == r.expansion_R == 0.0 for r in rep.rows)
    assert rep.solve_counts == {"linear": 2, "bsb": 4}
    assert rep.figure_path.exists() and rep.figure_path.stat().st_size > 0


def test_sweep_csv_independent_of_workers(tmp_path):
    base = config_from_dict(dict(SMALL, sweep={"eps_list": [0.2, 0.1]}))
    paths = []
    for w in (1, 2):
        cfg = replace(base, scheme=replace(base.scheme, workers=w), output_dir=tmp_path / f"w{w}")
        paths.append(run_sweep(cfg).csv_path)
    assert _sweep_rows(paths[0]) == _sweep_rows(paths[1])
    header = paths[0].read_text().splitlines()[0].split(",")
    assert header == ["eps", "v_eps", "v0", "v1", "expansion_R", "max_policy_iters", "wall_time_s"]


def test_sweep_wraps_solver_failures():
    cfg = config_from_dict(dict(SMALL, policy={"max_iters": 1}))
    with pytest.raises(SweepError):
        run_sweep(cfg, write=False)


def test_aitken_factor_on_geometric_sequence():
    f, lim = aitken_factor(1.0 + 0.4, 1.0 + 0.1, 1.0 + 0.025)
    assert f == pytest.approx(4.0) and lim == pytest.approx(1.0)
    assert refinement_levels(201) == (101, 201, 401)


def test_asian_forward():
    from asian_uvm import ModelParams
    p = ModelParams(r=0.05, sigma0=0.2, eps=0.0, T=1.0)
    assert asian_forward(p) == pytest.approx(100 * math.expm1(0.05) / 0.05)
    assert asian_forward(replace(p, r=0.0)) == 100.0


def test_check_line_format():
    assert Check("x", 1.0, 2.0, True).line().startswith("PASS")
    assert Check("x", 1.0, 2.0, False).line().startswith("FAIL")


def test_validate_zero_rate_identities():
    cfg = config_from_dict({"model": {"r": 0.0}, "grid": {"nx": 61, "ny": 61, "nt": 60},
                            "mc": {"n_paths": 20000, "n_steps": 50}})
    checks = {c.name: c for c in run_validate(cfg, ["discount_identity", "martingale", "put_call_parity"])}
    assert checks["discount_identity"].value == pytest.approx(1.0, abs=1e-12)
    assert all(c.passed for c in checks.values())


# ---- command line ---------------------------------------------------------------


def test_cli_bad_config_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[modle]\nr = 1\n")
    assert main(["price-v0", "--config", str(bad)]) == 2
    assert main(["price-v0", "--config", str(tmp_path / "missing.toml")]) == 2
    assert "configuration error" in capsys.readouterr().err


def test_cli_coarse_order_check_exit_1(tmp_path, capsys):
    code = main(["validate", "--config", str(CONFIGS / "coarse.toml"), "--only", "convergence_order",
                 "--out", str(tmp_path)])
    assert code == 1
    assert capsys.readouterr().out.startswith("FAIL  convergence_order")
    assert (tmp_path / "validate.txt").exists()


def test_cli_policy_failure_exit_3(tmp_path, capsys):
    cfg = _toml(tmp_path / "c.toml", dict(SMALL, policy={"max_iters": 1}, model=dict(SMALL["model"], eps=0.2)))
    assert main(["price-bsb", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "solver failure" in capsys.readouterr().err


def test_cli_bsb_at_zero_band_equals_v0(tmp_path, capsys):
    cfg = _toml(tmp_path / "c.toml", SMALL)
    assert main(["price-v0", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    v0 = json.loads(capsys.readouterr().out)
    assert main(["price-bsb", "--config", str(cfg), "--eps", "0", "--out", str(tmp_path / "b")]) == 0
    bsb = json.loads(capsys.readouterr().out)
    assert v0["price"] == bsb["price"]
    assert (tmp_path / "a" / "v0_surface.csv").read_bytes() == (tmp_path / "b" / "bsb_surface.csv").read_bytes()


def test_cli_price_v1_and_mc_with_control(tmp_path, capsys):
    cfg = _toml(tmp_path / "c.toml", SMALL)
    assert main(["price-v1", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert float(rec["v1"]) > 0
    assert read_node_csv(tmp_path / "v1_surface.csv").shape == (41, 41)
    assert main(["price-bsb", "--config", str(cfg), "--gzip", "--out", str(tmp_path)]) == 0
    bsb = json.loads(capsys.readouterr().out)
    assert bsb["control"].endswith(".gz")
    assert main(["mc", "--config", str(cfg), "--control", bsb["control"], "--out", str(tmp_path)]) == 0
    wc = json.loads(capsys.readouterr().out)
    assert main(["mc", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    base = json.loads(capsys.readouterr().out)
    assert wc["kind"] == "worst_case" and base["kind"] == "constant_vol"
    assert wc["price"] > base["price"]
    assert len((tmp_path / "mc.jsonl").read_text().splitlines()) == 2


def test_cli_sweep_prints_csv(tmp_path, capsys):
    cfg = _toml(tmp_path / "c.toml", SMALL)
    assert main(["sweep", "--config", str(cfg), "--eps", "0.2,0.1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("eps,v_eps") and len(out) == 3
    assert (tmp_path / "sweep.png").exists()


def test_cli_bad_grid_argument(capsys):
    with pytest.raises(SystemExit) as info:
        main(["price-v0", "--grid", "10,10"])
    assert info.value.code == 2
