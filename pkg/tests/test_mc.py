import json
import math

import numpy as np
import pytest

from asian_uvm import (ConfigError, ControlField, Grid2D, MCConfig, MCResult, ModelParams, Payoff,
                       TimeGrid, price_constant_vol, price_worst_case)

SMALL = MCConfig(n_paths=20_000, n_steps=50, seed=7, block_size=4096)


def test_constant_payoff_is_discount_factor(params):
    res = price_constant_vol(params, 0.2, Payoff.constant(1.0), SMALL)
    assert res.price == pytest.approx(math.exp(-0.05), abs=1e-15)
    assert res.stderr == 0.0


def test_deterministic_limit(params):
    # with vanishing volatility the average is x0 (e^{rT} - 1) / (rT)
    mc = MCConfig(n_paths=2, n_steps=500, seed=1)
    res = price_constant_vol(params, 1e-8, Payoff.call(100.0), mc)
    avg = 100.0 * math.expm1(0.05) / 0.05
    assert res.price == pytest.approx(math.exp(-0.05) * (avg - 100.0), abs=1e-4)
    assert res.price == pytest.approx(2.4182, abs=1e-4)


def test_seed_determinism_across_workers(params, call):
    a = price_constant_vol(params, 0.2, call, SMALL)
    b = price_constant_vol(params, 0.2, call, MCConfig(**{**SMALL.__dict__, "workers": 3}))
    c = price_constant_vol(params, 0.2, call, SMALL)
    assert (a.price, a.stderr) == (b.price, b.stderr) == (c.price, c.stderr)
    d = price_constant_vol(params, 0.2, call, MCConfig(**{**SMALL.__dict__, "seed": 8}))
    assert d.price != a.price


def test_antithetic_reduces_stderr(params, call):
    kw = dict(n_paths=100_000, n_steps=50, seed=3)
    anti = price_constant_vol(params, 0.2, call, MCConfig(antithetic=True, **kw))
    plain = price_constant_vol(params, 0.2, call, MCConfig(antithetic=False, **kw))
    assert anti.stderr < plain.stderr
    assert abs(anti.price - plain.price) < 4 * math.hypot(anti.stderr, plain.stderr)


def test_martingale_at_zero_rate():
    p = ModelParams(r=0.0, sigma0=0.2, eps=0.0, T=1.0)
    # phi(A) = A, so the price is E[A] = x0 when r = 0
    res = price_constant_vol(p, 0.2, Payoff.linear(1.0, 0.0), MCConfig(n_paths=100_000, n_steps=100, seed=11))
    assert res.within(100.0, 3.0)


def test_drifted_average_mean(params):
    res = price_constant_vol(params, 0.2, Payoff.linear(1.0, 0.0), MCConfig(n_paths=100_000, n_steps=100, seed=5))
    target = math.exp(-0.05) * 100.0 * math.expm1(0.05) / 0.05
    assert res.within(target, 3.0, extra=1e-3)


def _control(params, mask_value, nt=10):
    g = Grid2D.for_params(params, 21, 21)
    tg = TimeGrid(params.T, nt)
    mask = np.full((nt + 1,) + g.shape, mask_value, dtype=np.uint8)
    return ControlField(g, tg.times, mask, params.sigma0, params.sigma_hi)


def test_worst_case_reduces_to_constant_vol(params, butterfly):
    p = params.with_eps(0.1)
    ones = price_worst_case(p, butterfly, _control(p, 1), SMALL)
    const = price_constant_vol(p, p.sigma_hi, butterfly, SMALL)
    assert ones.price == const.price and ones.stderr == const.stderr
    zeros = price_worst_case(params, butterfly, _control(params, 0), SMALL)
    base = price_constant_vol(params, params.sigma0, butterfly, SMALL)
    assert zeros.price == base.price


def test_worst_case_needs_full_horizon(params, butterfly):
    p = params.with_eps(0.1)
    ctl = _control(p, 1)
    short = ControlField(ctl.grid, ctl.times * 0.5, ctl.mask, ctl.sigma_lo, ctl.sigma_hi)
    with pytest.raises(ConfigError):
        price_worst_case(p, butterfly, short, SMALL)


def test_result_json_roundtrip():
    r = MCResult(1.25, 0.01, 1000, 42)
    assert json.loads(r.to_json()) == {"price": 1.25, "stderr": 0.01, "n_paths": 1000, "seed": 42}
    with pytest.raises(ValueError):
        MCResult(1.0, -1.0, 10, 1)


@pytest.mark.parametrize("kw", [dict(n_paths=1), dict(n_steps=0), dict(seed=-1),
                                dict(n_paths=11), dict(workers=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        MCConfig(**kw)


def test_rejects_nonpositive_sigma(params, call):
    with pytest.raises(ConfigError):
        price_constant_vol(params, 0.0, call, SMALL)
