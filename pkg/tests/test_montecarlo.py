import math

import numpy as np
import pytest

from sabrgrid.market import BP, REFERENCE_STRIKE, MarketCurve, SwaptionSpec, bond_price, reference_market
from sabrgrid.model import Measure, SabrLmmParams, correlation_factor, joint_correlation
from sabrgrid.montecarlo import McConfig, estimate_price, simulate_step

TENOR, CURVE = reference_market()
CAPLET = SwaptionSpec(1, 2, REFERENCE_STRIKE)
M1 = Measure.forward(1)


def test_step_without_noise_or_vol():
    params = SabrLmmParams(1.0, (0.0,) * 9, 0.0, (0.4,) * 9, 0.1)
    F0 = np.array(CURVE.forwards0[1:4])
    for scheme in ("log-euler", "euler-full-truncation"):
        F, V = simulate_step(F0, 1.0, 0.01, np.zeros(4), params, M1, TENOR, [1, 2, 3], scheme)
        np.testing.assert_array_equal(F, F0)
        assert V == 1.0


def test_terminal_last_forward_is_driftless():
    params = SabrLmmParams.from_curve(CURVE)
    F0 = np.array(CURVE.forwards0[6:9])
    F, _ = simulate_step(F0, 1.0, 0.01, np.zeros(4), params, Measure.terminal(), TENOR, [6, 7, 8],
                         "euler-full-truncation")
    assert F[2] == F0[2]
    assert np.all(F[:2] < F0[:2])


def test_step_formulas_by_hand():
    params = SabrLmmParams.from_curve(CURVE, sigma=0.3)
    F0 = np.array([0.03, 0.04])
    inc = np.array([0.05, -0.02, 0.03])
    dt = 1 / 256
    a1, a2 = params.alphas[1], params.alphas[2]
    mu2 = a2 * 1.1**2 * (0.04 * a2 / 1.04)  # forward measure at a=1, j=2 only
    F, V = simulate_step(F0, 1.1, dt, inc, params, M1, TENOR, [1, 2], "log-euler")
    assert F[0] == pytest.approx(0.03 * math.exp(-0.5 * a1**2 * 1.21 * dt + a1 * 1.1 * 0.05), rel=1e-14)
    assert F[1] == pytest.approx(0.04 * math.exp((mu2 - 0.5 * a2**2 * 1.21) * dt - a2 * 1.1 * 0.02),
                                 rel=1e-14)
    assert V == pytest.approx(1.1 * math.exp(-0.5 * 0.09 * dt + 0.3 * 0.03), rel=1e-14)
    F, V = simulate_step(F0, 1.1, dt, inc, params, M1, TENOR, [1, 2], "euler-full-truncation")
    assert F[1] == pytest.approx(0.04 + mu2 * 0.04 * dt - a2 * 1.1 * 0.04 * 0.02, rel=1e-14)
    assert V == pytest.approx(1.1 + 0.3 * 1.1 * 0.03, rel=1e-14)
    _, V = simulate_step(F0, 1.0, dt, [0, 0, -5.0], params, M1, TENOR, [1, 2], "euler-full-truncation")
    assert V == 0.0


def test_one_step_martingale():
    params = SabrLmmParams.from_curve(CURVE, sigma=0.3)
    n, dt = 1_000_000, 0.25
    rng = np.random.default_rng(11)
    L = correlation_factor(joint_correlation(params, TENOR, [1]))
    inc = (L @ rng.standard_normal((2, n))) * math.sqrt(dt)
    F0 = np.full((1, n), CURVE.forwards0[1])
    F, V = simulate_step(F0, np.ones(n), dt, inc, params, M1, TENOR, [1])
    se = F.std() / math.sqrt(n)
    assert abs(F.mean() - CURVE.forwards0[1]) < 3 * se
    assert abs(V.mean() - 1.0) < 3 * V.std() / math.sqrt(n)


def test_deterministic_when_vols_vanish():
    curve = MarketCurve(CURVE.forwards0, (0.0,) * 9)
    params = SabrLmmParams.from_curve(curve)
    spec = SwaptionSpec(1, 2, 0.02)
    res = estimate_price(spec, curve, params, M1, McConfig(5000, seed=3))
    expect = bond_price(curve.forwards0, 0, 2, TENOR) * (CURVE.forwards0[1] - 0.02) * BP
    assert res.mean_bp == pytest.approx(expect, rel=1e-12)
    assert res.half_width_bp == 0.0
    assert res.ci_low == res.ci_high == res.mean_bp


def test_single_path_has_no_interval():
    res = estimate_price(CAPLET, CURVE, SabrLmmParams.from_curve(CURVE), M1, McConfig(1, seed=1))
    assert res.paths == 1 and math.isnan(res.half_width_bp)


def test_reproducible_and_worker_independent():
    params = SabrLmmParams.from_curve(CURVE, sigma=0.3)
    spec = SwaptionSpec(1, 3, REFERENCE_STRIKE)
    mc = McConfig(50_000, seed=42, block_size=4096)
    ref = estimate_price(spec, CURVE, params, M1, mc)
    assert estimate_price(spec, CURVE, params, M1, mc) == ref
    for workers in (4, 16):
        assert estimate_price(spec, CURVE, params, M1, mc, workers) == ref
    other = estimate_price(spec, CURVE, params, M1, McConfig(50_000, seed=43, block_size=4096))
    assert other.mean_bp != ref.mean_bp


def test_half_width_scaling():
    params = SabrLmmParams.from_curve(CURVE)
    small = estimate_price(CAPLET, CURVE, params, M1, McConfig(100_000, seed=5))
    large = estimate_price(CAPLET, CURVE, params, M1, McConfig(400_000, seed=5))
    assert 0.45 <= large.half_width_bp / small.half_width_bp <= 0.56


def test_caplet_interval_contains_black():
    params = SabrLmmParams.from_curve(CURVE)
    res = estimate_price(CAPLET, CURVE, params, M1, McConfig(1_000_000, seed=2024))
    assert res.contains(0.659096)


def test_configuration_errors():
    with pytest.raises(ValueError):
        McConfig(0)
    with pytest.raises(ValueError):
        McConfig(10, scheme="milstein")
    params = SabrLmmParams.from_curve(CURVE, beta=0.5)
    with pytest.raises(ValueError, match="beta = 1"):
        estimate_price(CAPLET, CURVE, params, M1, McConfig(10))
    estimate_price(CAPLET, CURVE, params, M1, McConfig(10, scheme="euler-full-truncation"))
    with pytest.raises(ValueError):
        estimate_price(CAPLET, CURVE, SabrLmmParams.from_curve(CURVE), Measure.terminal(), McConfig(10))
