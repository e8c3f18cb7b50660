import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from sabrgrid.market import (BP, REFERENCE_STRIKE, MarketCurve, SwaptionSpec, TenorStructure,
                             black_price, bond_price, caplet_black_value, norm_cdf,
                             reference_market, swaption_payoff)

# 0.5 + integral of the standard normal density over [0, 1.96] (adaptive quadrature)
NORM_CDF_196 = 0.9750021048517796


def test_norm_cdf_values():
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(-0.7) == pytest.approx(1 - norm_cdf(0.7), abs=1e-15)
    assert norm_cdf(1.96) == pytest.approx(NORM_CDF_196, abs=1e-12)
    assert round(norm_cdf(1.96), 7) == 0.9750021


@pytest.mark.parametrize("x", [-6.0, -2.5, -0.3, 0.1, 1.0, 3.7])
def test_norm_cdf_against_quadrature(x):
    dens = lambda u: math.exp(-0.5 * u * u) / math.sqrt(2 * math.pi)
    ref = 0.5 + math.copysign(quad(dens, 0, abs(x), epsabs=1e-14, epsrel=1e-12, limit=200)[0], x)
    assert norm_cdf(x) == pytest.approx(ref, abs=1e-12)


def test_norm_cdf_vectorised_matches_scalar():
    xs = np.linspace(-8, 8, 101)
    np.testing.assert_allclose(norm_cdf(xs), [norm_cdf(float(x)) for x in xs], atol=1e-15)


def test_norm_cdf_monotone_and_bounded():
    ys = norm_cdf(np.linspace(-40, 40, 4001))
    assert np.all(np.diff(ys) >= 0)
    assert ys.min() >= 0 and ys.max() <= 1


def test_black_limits():
    assert black_price(0.05, 0.06, 0.0) == pytest.approx(0.01, abs=1e-15)
    assert black_price(0.06, 0.05, 0.0) == 0.0
    atm = black_price(0.04, 0.04, 0.2)
    assert atm == pytest.approx(0.04 * (2 * norm_cdf(0.1) - 1), abs=1e-15)


@pytest.mark.parametrize("args", [(0.0, 0.04, 0.2), (0.05, 0.0, 0.2), (0.05, 0.04, -0.1)])
def test_black_rejects_bad_input(args):
    with pytest.raises(ValueError):
        black_price(*args)


def test_black_lattice_properties():
    Ks = np.linspace(0.01, 0.1, 10)
    Fs = np.linspace(0.01, 0.1, 10)
    nus = np.linspace(0.0, 1.5, 10)
    for K in Ks:
        for F in Fs:
            vals = [black_price(K, F, nu) for nu in nus]
            assert np.all(np.diff(vals) >= -1e-15)  # vega >= 0
            for v in vals:
                assert max(F - K, 0.0) - 1e-15 <= v <= F + 1e-15


def test_bond_price_examples():
    tenor, curve = reference_market()
    F = curve.forwards0
    assert bond_price(F, 3, 3, tenor) == 1.0
    assert bond_price(F, 0, 1, tenor) == pytest.approx(0.976340287238922, rel=1e-12)
    assert bond_price(F, 0, 2, tenor) == pytest.approx(0.9453206855157189, rel=1e-12)
    with pytest.raises(ValueError):
        bond_price(F, 2, 1, tenor)
    with pytest.raises(ValueError):
        bond_price([-1.5, 0.01], 0, 2, TenorStructure.annual(2))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 0.2), min_size=6, max_size=6),
       st.tuples(st.integers(0, 6), st.integers(0, 6), st.integers(0, 6)))
def test_bond_price_telescopes(forwards, ijk):
    i, j, k = sorted(ijk)
    tenor = TenorStructure.annual(6)
    lhs = bond_price(forwards, i, k, tenor)
    rhs = bond_price(forwards, i, j, tenor) * bond_price(forwards, j, k, tenor)
    assert lhs == pytest.approx(rhs, rel=1e-13)
    assert 0 < lhs <= 1


def test_bond_price_vectorised():
    tenor = TenorStructure.annual(2)
    F = [np.array([0.0, 0.05]), np.array([0.01, 0.02])]
    np.testing.assert_allclose(bond_price(F, 0, 2, tenor), [1 / 1.01, 1 / (1.05 * 1.02)])


def test_swaption_payoff_examples():
    tenor = TenorStructure.annual(4)
    spec = SwaptionSpec(1, 2, 0.055)
    assert swaption_payoff([0, 0.055, 0.055, 0.055], SwaptionSpec(1, 4, 0.055), tenor) == 0.0
    assert swaption_payoff([0, 0.04], spec, tenor) == 0.0
    assert swaption_payoff([0, 0.07], spec, tenor) == pytest.approx(0.015 / 1.07, rel=1e-14)
    # deflated by P(T_1, T_2) it becomes the plain caplet payoff
    assert swaption_payoff([0, 0.07], spec, tenor, numeraire=2) == pytest.approx(0.015, rel=1e-14)
    with pytest.raises(ValueError):
        swaption_payoff([0, 0.07], spec, tenor, numeraire=0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.15), st.floats(0.01, 0.1), st.integers(1, 3))
def test_single_period_payoff_is_caplet(F, K, a):
    tenor = TenorStructure.annual(5)
    forwards = [0.03] * 5
    forwards[a] = F
    spec = SwaptionSpec(a, a + 1, K)
    expect = bond_price(forwards, a, a + 1, tenor) * tenor.accruals[a] * max(F - K, 0.0)
    assert swaption_payoff(forwards, spec, tenor) == expect


def test_multi_period_payoff_by_hand():
    tenor = TenorStructure((0.0, 1.0, 1.5, 2.5))
    F = [0.0, 0.06, 0.07]
    K = 0.05
    p2 = 1 / (1 + 0.5 * 0.06)
    p3 = p2 / (1 + 1.0 * 0.07)
    expect = p2 * 0.5 * (0.06 - K) + p3 * 1.0 * (0.07 - K)
    assert swaption_payoff(F, SwaptionSpec(1, 3, K), tenor) == pytest.approx(expect, rel=1e-14)


def test_caplet_black_reference():
    tenor, curve = reference_market()
    bp = caplet_black_value(curve, tenor, 1, REFERENCE_STRIKE) * BP
    assert bp == pytest.approx(0.659096, abs=1e-6)


def test_caplet_intrinsic_limits():
    tenor = TenorStructure.annual(3)
    otm = MarketCurve((0.02, 0.03, 0.04), (0.0, 0.0, 0.0))
    assert caplet_black_value(otm, tenor, 1, 0.05) == 0.0
    itm = MarketCurve((0.02, 0.07, 0.04), (0.0, 0.0, 0.0))
    P = bond_price(itm.forwards0, 0, 2, tenor)
    assert caplet_black_value(itm, tenor, 1, 0.05) == pytest.approx(P * 0.02, rel=1e-14)
    with pytest.raises(ValueError):
        caplet_black_value(itm, tenor, 0, 0.05)


def test_domain_types_validate():
    with pytest.raises(ValueError):
        TenorStructure((0.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        MarketCurve((0.01, -0.02), (0.1, 0.1))
    with pytest.raises(ValueError):
        SwaptionSpec(0, 2, 0.05)
    with pytest.raises(ValueError):
        SwaptionSpec(2, 2, 0.05)
    with pytest.raises(ValueError):
        SwaptionSpec(1, 2, 0.0)
    tenor = TenorStructure.annual(3)
    assert tenor.accruals == (1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        SwaptionSpec(1, 4, 0.05).check_tenor(tenor)
    with pytest.raises(ValueError):
        MarketCurve((0.01,), (0.1,)).check_tenor(tenor)
