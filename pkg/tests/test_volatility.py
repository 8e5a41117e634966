import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mflmm.volatility import (
    EXCITED,
    REFERENCE_ANCHORS,
    REFERENCE_CORRELATION,
    RMW,
    RMW_LITERAL,
    TOY,
    FORM_ABCD,
    HumpParams,
    MeanFieldSpec,
    Variant,
    VolatilityModel,
    angles_from_corr,
    correlation_matrix,
    mf_factor,
    reference_angles,
    scalar_vol,
    threshold_from_policy,
    vol_vector,
)


def test_toy_value_at_zero():
    assert scalar_vol(TOY, 0.0) == pytest.approx(0.34, abs=1e-15)


def test_abcd_long_end_limit():
    assert scalar_vol(HumpParams(0.3, 0.2, 0.5, 0.11, FORM_ABCD), 1e4) == pytest.approx(0.11, abs=1e-15)


def test_hump_form_direct_evaluation():
    # (0.07*5 + 0.075) e^{-1} + 0.6
    assert scalar_vol(RMW_LITERAL, 5.0) == pytest.approx(0.425 * math.exp(-1.0) + 0.6, rel=1e-15)
    # the quoted approximation 0.75638 agrees to its printed precision only loosely (exact 0.756349)
    assert scalar_vol(RMW_LITERAL, 5.0) == pytest.approx(0.75638, abs=5e-5)


def test_presets_shapes():
    tau = np.linspace(0, 49, 491)
    rmw = scalar_vol(RMW, tau)
    assert rmw[0] == pytest.approx(0.145) and rmw.max() < 0.25 and rmw[-1] == pytest.approx(0.075, abs=1e-6)
    assert np.all(scalar_vol(EXCITED, tau) > rmw)


def test_unknown_form():
    with pytest.raises(ValueError):
        HumpParams(1, 1, 1, 1, "spline")


def test_self_correlation_angle():
    assert reference_angles(50)[0] == 0.0


def test_anchor_angle_46():
    assert reference_angles(50)[45] == pytest.approx(math.acos(0.19), abs=1e-15)
    assert reference_angles(50)[45] == pytest.approx(1.37963, abs=1e-5)


def test_rebuilt_matrix_entry_6_11():
    th = reference_angles(50)
    assert 0.98 <= math.cos(th[10] - th[5]) <= 0.995


def test_rebuilt_matrix_matches_all_published_entries():
    th = reference_angles(50)
    idx = REFERENCE_ANCHORS - 1
    rebuilt = correlation_matrix(th[idx])
    assert np.max(np.abs(rebuilt - REFERENCE_CORRELATION)) <= 0.02


@pytest.mark.parametrize("row", [[1.0, 1.2], [1.0, 0.0], [0.9, 0.5]])
def test_angles_reject_bad_rows(row):
    with pytest.raises(ValueError):
        angles_from_corr(row, anchors=[1, 6])


def test_extrapolated_angles_are_monotone_and_bounded():
    th = reference_angles(80)
    assert np.all(np.diff(th) >= 0) and th[-1] <= math.pi


@given(st.lists(st.floats(0.0, 3.0), min_size=2, max_size=60))
def test_correlation_matrix_is_psd(angles):
    ev = np.linalg.eigvalsh(correlation_matrix(angles))
    assert ev.min() >= -1e-10


def test_mf_factor_examples():
    assert mf_factor("taming", 0.5, 1.0) == 1.0
    assert mf_factor("taming", 2.0, 1.0) == pytest.approx(math.exp(-1.0), abs=1e-16)
    assert mf_factor("taming", 0.0, 1e-6) == 1.0
    assert mf_factor("deterministic", 5.0, 1.0) == 1.0


@given(st.floats(1e-6, 1.0), st.lists(st.floats(0.0, 10.0), min_size=2, max_size=20))
def test_mf_factor_monotone_and_bounded(thr, psis):
    psis = np.sort(np.asarray(psis))
    f = mf_factor("taming", psis, thr)
    assert np.all(np.diff(f) <= 0)
    assert np.all((f > 0) | (psis - thr > 700 * thr)) and np.all(f <= 1)
    assert np.all(f[psis <= thr] == 1.0)


def test_mf_factor_rejects_negative():
    with pytest.raises(ValueError):
        mf_factor("taming", -1.0, 1.0)


ANGLES = reference_angles(10)


def test_decorrelate_at_zero_psi_is_embedded_deterministic():
    spec = MeanFieldSpec("decorrelate", 0.01)
    v = vol_vector(spec, 4, 1.0, 0.0, RMW, ANGLES, 3.0, 10)
    base = vol_vector(MeanFieldSpec(), 4, 1.0, 0.0, RMW, ANGLES, 3.0, 10)
    np.testing.assert_allclose(v[:2], base, rtol=1e-15)
    assert np.all(v[2:] == 0.0)


def test_decorrelate_half_blend():
    thr = 0.01
    spec = MeanFieldSpec("decorrelate", thr)
    m, t, T = 5, 1.0, 4.0
    v = vol_vector(spec, m, t, thr * math.log(2.0), RMW, ANGLES, T, 10)
    base = vol_vector(MeanFieldSpec(), m, t, 0.0, RMW, ANGLES, T, 10)
    raw = np.zeros(10)
    raw[:2] = 0.5 * base
    raw[m - 1] += 0.5
    np.testing.assert_allclose(v, raw * np.linalg.norm(base) / np.linalg.norm(raw), rtol=1e-14)
    assert np.linalg.norm(v) == pytest.approx(scalar_vol(RMW, T - t), rel=1e-14)


def test_anticorrelate_signs_above_threshold():
    spec = MeanFieldSpec("anticorrelate", 0.01)
    s3 = abs(scalar_vol(RMW, 2.0 - 0.5))
    s4 = abs(scalar_vol(RMW, 3.0 - 0.5))
    v3 = vol_vector(spec, 3, 0.5, 0.02, RMW, ANGLES, 2.0, 10)
    v4 = vol_vector(spec, 4, 0.5, 0.02, RMW, ANGLES, 3.0, 10)
    expect3, expect4 = np.zeros(10), np.zeros(10)
    expect3[1], expect4[1] = s3, -s4
    np.testing.assert_array_equal(v3, expect3)
    np.testing.assert_array_equal(v4, expect4)


def test_anticorrelate_needs_even_horizon():
    with pytest.raises(ValueError):
        MeanFieldSpec("anticorrelate", 0.1).dimension(9)


def test_vol_vector_past_fixing():
    with pytest.raises(ValueError):
        vol_vector(MeanFieldSpec(), 2, 2.0, 0.0, RMW, ANGLES, 1.0, 10)


@given(
    st.sampled_from(list(Variant)),
    st.integers(1, 10),
    st.floats(0.0, 1.0),
    st.floats(0.0, 0.1),
    st.floats(1e-5, 0.05),
    st.sampled_from([RMW, EXCITED, TOY]),
)
def test_norm_never_exceeds_deterministic(variant, m, frac, psi, thr, hump):
    T = float(m - 1)
    t = frac * T
    v = vol_vector(MeanFieldSpec(variant, thr), m, t, psi, hump, ANGLES, T, 10)
    target = abs(scalar_vol(hump, T - t))
    if variant is Variant.TAMING:
        assert np.linalg.norm(v) <= target * (1 + 1e-14)
    else:
        assert np.linalg.norm(v) == pytest.approx(target, rel=1e-13)


@given(st.sampled_from(list(Variant)), st.integers(0, 9), st.lists(st.floats(0.0, 0.05), min_size=10, max_size=10))
def test_loadings_match_vol_vector(variant, n, psi):
    dates = np.arange(11.0)
    spec = MeanFieldSpec(variant, 0.004)
    model = VolatilityModel(EXCITED, ANGLES, spec)
    lam = model.loadings(dates, n, np.array(psi))
    assert np.all(lam[:n] == 0.0)
    for c in range(n, 10):
        v = vol_vector(spec, c + 1, dates[n], psi[c], EXCITED, ANGLES, dates[c], 10)
        np.testing.assert_allclose(lam[c], v, rtol=1e-13, atol=1e-16)


@given(st.integers(0, 9), st.lists(st.floats(0.0, 0.05), min_size=10, max_size=10))
def test_taming_dominates_pathwise(n, psi):
    dates = np.arange(11.0)
    det = VolatilityModel(EXCITED, ANGLES, MeanFieldSpec("deterministic", 0.004)).loadings(dates, n, np.array(psi))
    tam = VolatilityModel(EXCITED, ANGLES, MeanFieldSpec("taming", 0.004)).loadings(dates, n, np.array(psi))
    assert np.all(np.linalg.norm(tam, axis=1) <= np.linalg.norm(det, axis=1) * (1 + 1e-15))


def test_threshold_policies():
    fwd = np.linspace(0.01, 0.03, 12)
    assert threshold_from_policy("l10-squared", fwd) == pytest.approx(fwd[9] ** 2)
    assert threshold_from_policy("l10-displaced-squared", fwd, 0.01) == pytest.approx((fwd[9] + 0.01) ** 2)
    assert threshold_from_policy("fixed:0.5", fwd) == 0.5
    assert threshold_from_policy(0.25, fwd) == 0.25
    assert math.isinf(threshold_from_policy("inf", fwd))
    with pytest.raises(ValueError):
        threshold_from_policy("l10-squared", fwd[:5])
    with pytest.raises(ValueError):
        threshold_from_policy("fixed:-1", fwd)


def test_variant_parse():
    assert Variant.parse("Taming") is Variant.TAMING
    with pytest.raises(ValueError):
        Variant.parse("wild")

