import io
import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mflmm.market_data import (
    CurveError,
    DiscountCurve,
    ForwardCurve,
    TenorStructure,
    bootstrap_forwards,
    default_curve_path,
    load_curve,
)


def test_zero_rate_curve_is_flat_one():
    curve = DiscountCurve.from_spot_rates([1, 2, 5], [0.0, 0.0, 0.0])
    assert np.all(curve.df([0.0, 1.0, 3.0, 5.0]) == 1.0)


def test_single_compounding_factor():
    curve = load_curve(io.StringIO("1, 0.02\n"))
    assert curve.df(1.0) == pytest.approx(1 / 1.02, abs=1e-15)
    assert curve.df(1.0) == pytest.approx(0.980392, abs=1e-6)


def test_two_node_spot_curve_matches_direct_recomputation():
    curve = load_curve(io.StringIO("maturity,spot\n1,0.01\n2,0.015\n"))
    # spreadsheet-style: (1 + r)^-t
    assert curve.df(1.0) == 1.01**-1
    assert curve.df(2.0) == 1.015**-2


def test_continuous_convention():
    curve = load_curve(io.StringIO("1 0.02\n2 0.02\n"), convention="continuous")
    assert curve.df(2.0) == pytest.approx(np.exp(-0.04), rel=1e-15)


@pytest.mark.parametrize(
    "text, match",
    [
        ("", "no data"),
        ("1,0.01\n1,0.02\n", "strictly increasing"),
        ("2,0.01\n1,0.02\n", "strictly increasing"),
        ("1,0.01\n2,nan\n", "non-finite"),
        ("1,0.01\n2,abc\n", "cannot parse"),
        ("1\n", "two columns"),
    ],
)
def test_malformed_files_rejected(text, match):
    with pytest.raises(CurveError, match=match):
        load_curve(io.StringIO(text))


def test_missing_file():
    with pytest.raises(CurveError, match="not found"):
        load_curve("/nonexistent/curve.csv")


def test_non_monotone_discount_factors_warn_not_fail():
    with pytest.warns(UserWarning, match="non-increasing"):
        curve = DiscountCurve.from_spot_rates([1, 2], [-0.01, -0.01])
    assert curve.df(2.0) > curve.df(1.0)


def test_bundled_curve_loads():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        curve = load_curve(default_curve_path())
    assert curve.maturities[0] == 1.0 and curve.maturities[-1] >= 50


def test_flat_discounting_gives_zero_forward():
    disc = DiscountCurve([1.0, 2.0], [0.98, 0.98])
    fwd = bootstrap_forwards(disc, TenorStructure(np.array([1.0, 2.0])))
    assert fwd.forwards[0] == 0.0


def test_forward_from_two_discount_factors():
    disc = DiscountCurve([1.0, 2.0], [0.98, 0.95])
    fwd = bootstrap_forwards(disc, TenorStructure(np.array([1.0, 2.0])))
    assert fwd.forwards[0] == pytest.approx(0.98 / 0.95 - 1.0, abs=1e-15)
    assert fwd.forwards[0] == pytest.approx(0.0315789, abs=1e-7)


def test_flat_two_percent_curve_gives_two_percent_forwards():
    disc = DiscountCurve.from_spot_rates(np.arange(1, 31), np.full(30, 0.02))
    fwd = bootstrap_forwards(disc, TenorStructure.yearly(30))
    np.testing.assert_allclose(fwd.forwards, 0.02, rtol=1e-12)


def test_tenor_outside_curve_support():
    disc = DiscountCurve.from_spot_rates([1, 2, 3], [0.01] * 3)
    with pytest.raises(CurveError, match="outside curve support"):
        bootstrap_forwards(disc, TenorStructure.yearly(5))


def test_negative_displaced_forward_rejected():
    disc = DiscountCurve([1.0, 2.0], [0.95, 0.98])  # forward about -3%
    with pytest.raises(CurveError, match="displacement"):
        bootstrap_forwards(disc, TenorStructure(np.array([1.0, 2.0])), displacement=0.01)


@pytest.mark.parametrize("dates", [[0.0], [0.0, 1.0, 1.0], [1.0, 0.5], [-1.0, 0.0]])
def test_tenor_invariants(dates):
    with pytest.raises(CurveError):
        TenorStructure(np.array(dates))


def test_yearly_tenor():
    t = TenorStructure.yearly(4)
    assert t.n_rates == 4
    np.testing.assert_array_equal(t.accruals, np.ones(4))


def test_forward_curve_json_echo(eur_curve):
    data = json.loads(eur_curve.to_json())
    assert data["displacement"] == 0.01
    assert len(data["forwards"]) == 50


spot_curves = st.lists(st.floats(-0.009, 0.08), min_size=2, max_size=40)


@given(spot_curves)
def test_round_trip_rebuilds_discount_factors(rates):
    n = len(rates)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        disc = DiscountCurve.from_spot_rates(np.arange(1, n + 1), rates)
    tenor = TenorStructure(np.arange(1, n + 1, dtype=float))
    fwd = bootstrap_forwards(disc, tenor, displacement=10.0)
    rebuilt = fwd.discount_factors()
    np.testing.assert_allclose(rebuilt, disc.df(tenor.dates), rtol=1e-12)


@given(spot_curves, st.floats(1e-3, 1e3))
def test_forwards_depend_only_on_ratios(rates, scale):
    n = len(rates)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        disc = DiscountCurve.from_spot_rates(np.arange(1, n + 1), rates)
    scaled = DiscountCurve(disc.maturities, disc.discount_factors * scale)
    tenor = TenorStructure(np.arange(1, n + 1, dtype=float))
    a = bootstrap_forwards(disc, tenor, displacement=10.0)
    b = bootstrap_forwards(scaled, tenor, displacement=10.0)
    np.testing.assert_allclose(a.forwards, b.forwards, rtol=1e-12, atol=1e-14)
    assert b.initial_discount == pytest.approx(scale * a.initial_discount, rel=1e-12)


def test_forward_curve_shape_check():
    with pytest.raises(CurveError):
        ForwardCurve(TenorStructure.yearly(3), np.zeros(2))
