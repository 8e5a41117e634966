import math
import time

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from conftest import flat_curve
from mflmm.engine import simulate, simulate_single_rate
from mflmm.pricing import (
    CapletQuote,
    PricingError,
    black_caplet,
    black_floorlet,
    cap_price,
    forward_swap_rate,
    implied_vol,
    integrated_vol,
    mc_caplet,
    mc_swaption,
    model_caplet,
    model_integrated_vol,
    norm_cdf,
)
from mflmm.volatility import RMW, MeanFieldSpec, VolatilityModel, reference_angles


@pytest.mark.parametrize("x", [-30.0, -8.0, -3.3, -1.0, -1e-3, 0.0, 0.5, 1.96, 4.0, 8.0, 30.0])
def test_norm_cdf_matches_mpmath(x):
    assert abs(norm_cdf(x) - float(mpmath.ncdf(x))) <= 1e-12


def test_black_caplet_reference_value():
    t0 = time.perf_counter()
    price = black_caplet(0.02, 0.02, 1.55, 1.0, 1.0)
    assert time.perf_counter() - t0 < 1e-3
    assert price == pytest.approx(0.0112332, abs=5e-6)


def test_black_caplet_against_quadrature():
    L, K, s, p0 = 0.02, 0.03, 0.5, 0.95

    def integrand(z):
        return max(L * math.exp(s * z - 0.5 * s * s) - K, 0.0) * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    z_star = (math.log(K / L) + 0.5 * s * s) / s
    val, _ = quad(integrand, z_star, 40.0, epsabs=1e-14, epsrel=1e-13)
    assert black_caplet(L, K, s, 1.0, p0) == pytest.approx(p0 * val, abs=1e-10)


def test_zero_vol_is_intrinsic():
    assert black_caplet(0.03, 0.02, 0.0, 0.5, 0.9) == pytest.approx(0.5 * 0.9 * 0.01, abs=1e-18)
    assert black_caplet(0.01, 0.02, 0.0) == 0.0
    np.testing.assert_allclose(black_caplet(np.array([0.03, 0.01]), 0.02, 0.0), [0.01, 0.0], atol=1e-18)


def test_black_rejects_non_positive_inputs():
    with pytest.raises(PricingError):
        black_caplet(-0.01, 0.02, 0.3)
    with pytest.raises(PricingError):
        black_caplet(0.02, 0.02, -0.1)


@given(st.floats(0.005, 0.1), st.floats(0.005, 0.1), st.floats(0.01, 3.0), st.floats(0.25, 2.0), st.floats(0.3, 1.0))
def test_implied_vol_round_trip(L, K, s, delta, p0):
    price = black_caplet(L, K, s, delta, p0)
    intrinsic = delta * p0 * max(L - K, 0.0)
    # skip prices indistinguishable from the no-arbitrage bounds in double precision
    if price - intrinsic < 1e-10 * delta * p0 * L or delta * p0 * L - price < 1e-10 * delta * p0 * L:
        return
    assert implied_vol(price, L, K, delta, p0) == pytest.approx(s, abs=1e-8)


def test_implied_vol_recovers_reference():
    price = black_caplet(0.02, 0.02, 1.55)
    assert implied_vol(price, 0.02, 0.02) == pytest.approx(1.55, abs=1e-8)


def test_implied_vol_at_intrinsic_is_zero():
    assert implied_vol(0.01, 0.03, 0.02) == 0.0


def test_implied_vol_outside_bounds():
    with pytest.raises(PricingError):
        implied_vol(0.025, 0.02, 0.01)
    with pytest.raises(PricingError):
        implied_vol(0.005, 0.03, 0.02)


def test_monotonicity():
    s = np.linspace(0.05, 3.0, 40)
    assert np.all(np.diff(black_caplet(0.02, 0.02, s)) > 0)
    K = np.linspace(0.005, 0.1, 40)
    assert np.all(np.diff(black_caplet(0.02, K, 0.5)) < 0)
    L = np.linspace(0.005, 0.1, 40)
    assert np.all(np.diff(black_caplet(L, 0.02, 0.5)) > 0)


@given(st.floats(0.005, 0.1), st.floats(0.005, 0.1), st.floats(0.0, 2.0))
def test_put_call_parity(L, K, s):
    lhs = black_caplet(L, K, s, 0.5, 0.9) - black_floorlet(L, K, s, 0.5, 0.9)
    assert lhs == pytest.approx(0.5 * 0.9 * (L - K), abs=1e-15)


def test_integrated_vol_cases():
    assert integrated_vol([0.2, 0.2], [0.0, 1.0, 2.0]) == pytest.approx(0.2 * math.sqrt(2), rel=1e-15)
    # variance above threshold damps by exp(-(v - thr)/thr)
    damped = integrated_vol([0.2], [0.0, 1.0], variance=[2.0], threshold=1.0)
    assert damped == pytest.approx(0.2 * math.exp(-1.0), rel=1e-15)
    assert integrated_vol([0.2], [0.0, 1.0], variance=[0.5], threshold=1.0) == pytest.approx(0.2)
    for grid, vol in [([0.0], []), ([0.0, 0.0], [0.1]), ([0.0, 1.0], [0.1, 0.2]), ([0.0, 1.0], [np.nan])]:
        with pytest.raises(PricingError):
            integrated_vol(vol, grid)


def test_cap_price_sums_caplets():
    caplets = [CapletQuote(i, 0.02, p) for i, p in [(1, 0.001), (2, 0.002), (3, 0.0035)]]
    assert cap_price(caplets, nominal=100.0) == pytest.approx(0.65, rel=1e-14)
    with pytest.raises(PricingError):
        cap_price([CapletQuote(1, 0.02, 0.1), CapletQuote(2, 0.03, 0.1)])
    with pytest.raises(PricingError):
        CapletQuote(1, 0.02, -0.1)


def test_model_integrated_vol_is_left_point_sum():
    curve = flat_curve(horizon=10)
    assert model_integrated_vol(curve, RMW, 1) == 0.0
    expect = math.sqrt(sum(RMW(3.0 - t) ** 2 for t in (0.0, 1.0, 2.0)))
    assert model_integrated_vol(curve, RMW, 4) == pytest.approx(expect, rel=1e-14)


def _model(variant="deterministic"):
    return VolatilityModel(RMW, reference_angles(10), MeanFieldSpec(variant, 1e-4))


@pytest.fixture(scope="module")
def det_scen():
    return simulate(flat_curve(horizon=10), _model(), 40_000, 31)


def test_mc_caplet_far_out_of_the_money(det_scen):
    q = mc_caplet(det_scen, 6, 10.0)
    assert q.price == 0.0 and q.std_err == 0.0


def test_mc_caplet_zero_vol_matches_discounted_intrinsic():
    curve = flat_curve(horizon=10)
    flat_model = VolatilityModel(RMW.__class__(0, 0, 0, 0, "abcd"), reference_angles(10))
    scen = simulate(curve, flat_model, 50, 2)
    q = mc_caplet(scen, 5, 0.01)
    assert q.price == pytest.approx(0.01 / 1.02**5, rel=1e-13)
    assert q.std_err < 1e-15


@pytest.mark.parametrize("i", [2, 5, 9])
def test_mc_caplet_matches_analytic(det_scen, i):
    curve = flat_curve(horizon=10)
    q = mc_caplet(det_scen, i, 0.02)
    ref = model_caplet(curve, RMW, i, 0.02)
    assert abs(q.price - ref.price) <= 4 * q.std_err


def test_mc_caplet_bad_index(det_scen):
    with pytest.raises(PricingError):
        mc_caplet(det_scen, 0, 0.02)
    with pytest.raises(PricingError):
        mc_caplet(det_scen, 11, 0.02)


def test_swaption_one_period_is_caplet(det_scen):
    """A one-period payer swaption exercised at t_j pays the caplet fixing at t_j."""
    for j in (1, 4, 8):
        sw = mc_swaption(det_scen, j, 1, 0.02)
        cap = mc_caplet(det_scen, j + 1, 0.02)
        assert sw.price == pytest.approx(cap.price, rel=1e-12)


def test_swaption_zero_vol_is_intrinsic():
    curve = flat_curve(horizon=10)
    flat_model = VolatilityModel(RMW.__class__(0, 0, 0, 0, "abcd"), reference_angles(10))
    scen = simulate(curve, flat_model, 10, 2)
    dfs = curve.discount_factors()
    swap = forward_swap_rate(curve, 3, 5)
    assert swap == pytest.approx(0.02, rel=1e-13)
    annuity = float(dfs[4:9].sum())
    assert mc_swaption(scen, 3, 5, 0.015).price == pytest.approx(annuity * (swap - 0.015), rel=1e-12)
    with pytest.raises(PricingError):
        mc_swaption(scen, 6, 5, 0.02)


def test_standard_error_shrinks_like_inverse_sqrt_paths():
    sizes = np.array([2_000, 8_000, 32_000, 128_000])
    ses = []
    for n in sizes:
        res = simulate_single_rate(0.02, 0.3, None, h=1.0, t_end=5.0, n_paths=int(n), seed=9)
        payoff = np.maximum(res.terminal - 0.02, 0.0)
        ses.append(payoff.std(ddof=1) / math.sqrt(n))
    slope = np.polyfit(np.log(sizes), np.log(ses), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)
