import numpy as np
import pytest

from conftest import flat_curve
from mflmm.diagnostics import excess_stats, histogram, martingale_test, short_rate_series, tail_mass
from mflmm.engine import ScenarioSet, simulate
from mflmm.volatility import EXCITED, RMW, HumpParams, MeanFieldSpec, VolatilityModel, reference_angles


def hand_set(short_rates):
    """Two-period scenario set whose rate fixing at t_0 takes the given values."""
    L = np.asarray(short_rates, dtype=float)
    P = L.size
    rates = [np.column_stack([L, np.full(P, 0.02)]), np.full((P, 1), 0.02)]
    numeraire = np.vstack([np.ones(P), 1.0 + L, (1.0 + L) * 1.02])
    return ScenarioSet(np.array([0.0, 1.0, 2.0]), 0.01, rates, numeraire, np.zeros((2, 2)))


def test_counting_example():
    scen = hand_set([0.1, 0.6, 0.3, 0.2])
    report = excess_stats(scen)
    assert report.fraction(0, 0.5) == 0.25
    assert report.fraction(0, 1.0) == 0.0
    assert tail_mass(scen, 0, 0.5) == 0.25
    rows = list(report.rows())
    assert len(rows) == 4 and rows[0] == {"step": 0, "time": 0.0, "threshold": 0.5, "fraction": 0.25}


def test_single_particle_fraction_is_binary():
    assert excess_stats(hand_set([0.7])).fraction(0, 0.5) == 1.0
    assert excess_stats(hand_set([0.4])).fraction(0, 0.5) == 0.0


@pytest.fixture(scope="module")
def excited():
    model = VolatilityModel(EXCITED, reference_angles(30), MeanFieldSpec("deterministic"))
    return simulate(flat_curve(horizon=30), model, 2_000, 4)


def test_fraction_antitone_in_threshold(excited):
    report = excess_stats(excited, thresholds=(0.05, 0.1, 0.5, 1.0, 2.0))
    assert np.all(np.diff(report.fractions, axis=1) <= 0)
    assert np.all((report.fractions >= 0) & (report.fractions <= 1))


def test_explosion_flags(excited):
    report = excess_stats(excited)
    flags = report.explosion()
    np.testing.assert_array_equal(flags, report.fractions[:, 0] > 0.01)


def test_histogram_accounts_for_every_particle(excited):
    h = histogram(excited, 20, np.linspace(0.0, 0.5, 11))
    assert h.total == excited.n_particles
    h2 = histogram(excited, 5, [0.0, 0.01], m=12)
    assert h2.total == excited.n_particles
    with pytest.raises(ValueError):
        histogram(excited, 5, [0.1, 0.0])


def test_short_rate_series_bounds(excited):
    with pytest.raises(IndexError):
        short_rate_series(excited, 30)


def test_excess_requires_thresholds(excited):
    with pytest.raises(ValueError):
        excess_stats(excited, thresholds=())


def test_martingale_first_row_is_exact():
    scen = simulate(flat_curve(), VolatilityModel(RMW, reference_angles(10)), 500, 3)
    report = martingale_test(scen)
    first = report.j == 0
    assert np.all(report.z[first] == 0.0)
    assert report.j.size == 55


def test_martingale_zero_vol_is_exact():
    flat = VolatilityModel(HumpParams(0, 0, 0, 0, "abcd"), reference_angles(10))
    scen = simulate(flat_curve(), flat, 20, 3)
    report = martingale_test(scen)
    assert np.all(report.z == 0.0)
    assert report.pass_fraction() == 1.0


def test_martingale_targets_from_curve():
    curve = flat_curve()
    scen = simulate(curve, VolatilityModel(RMW, reference_angles(10)), 100, 3)
    a = martingale_test(scen)
    b = martingale_test(scen, curve)
    np.testing.assert_allclose(a.target, b.target, rtol=1e-14)


def test_martingale_taming_passes():
    """Taming keeps the spot-measure drift, so deflated bonds stay martingales."""
    model = VolatilityModel(RMW, reference_angles(10), MeanFieldSpec("taming", 1e-5))
    scen = simulate(flat_curve(), model, 20_000, 8)
    assert martingale_test(scen).pass_fraction() >= 0.95
