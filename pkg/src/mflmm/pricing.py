"""Black caplet formulas, implied volatility and Monte Carlo pricers on scenario sets."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .engine import ScenarioSet
from .market_data import ForwardCurve
from .volatility import HumpParams, scalar_vol

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class PricingError(ValueError):
    """Raised for inputs outside a pricer's domain."""


def norm_cdf(x):
    """Standard normal distribution function."""
    out = ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def _check_black(L, K, sigma_bar):
    if np.any(np.asarray(L) <= 0) or np.any(np.asarray(K) <= 0):
        raise PricingError("forward and strike must be positive (use displaced values L+alpha, K+alpha)")
    if np.any(np.asarray(sigma_bar) < 0):
        raise PricingError("integrated volatility must be non-negative")


def _d1d2(L, K, sigma_bar):
    # tiny sigma_bar overflows d1 to +-inf, which is the correct limit
    with np.errstate(over="ignore"):
        d1 = (np.log(L / K) + 0.5 * sigma_bar * sigma_bar) / sigma_bar
    return d1, d1 - sigma_bar


def black_caplet(L, K, sigma_bar, delta: float = 1.0, p0: float = 1.0):
    """Black caplet ``delta * p0 * (L N(d1) - K N(d2))``.

    ``sigma_bar`` is the integrated volatility (sqrt of the total variance to
    the fixing). Intrinsic value at ``sigma_bar = 0``.
    """
    _check_black(L, K, sigma_bar)
    if np.ndim(L) == 0 and np.ndim(K) == 0 and np.ndim(sigma_bar) == 0:
        if sigma_bar == 0.0:
            return delta * p0 * max(L - K, 0.0)
        d1, d2 = _d1d2(L, K, sigma_bar)
        return float(delta * p0 * (L * ndtr(d1) - K * ndtr(d2)))
    L, K, s = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (L, K, sigma_bar)))
    out = delta * p0 * np.maximum(L - K, 0.0)
    pos = s > 0
    d1, d2 = _d1d2(L[pos], K[pos], s[pos])
    out = np.asarray(out * np.ones_like(L))
    out[pos] = (delta * p0 * (L[pos] * ndtr(d1) - K[pos] * ndtr(d2)))
    return out


def black_floorlet(L, K, sigma_bar, delta: float = 1.0, p0: float = 1.0):
    """Black floorlet ``delta * p0 * (K N(-d2) - L N(-d1))``."""
    _check_black(L, K, sigma_bar)
    if np.ndim(L) == 0 and np.ndim(K) == 0 and np.ndim(sigma_bar) == 0:
        if sigma_bar == 0.0:
            return delta * p0 * max(K - L, 0.0)
        d1, d2 = _d1d2(L, K, sigma_bar)
        return float(delta * p0 * (K * ndtr(-d2) - L * ndtr(-d1)))
    return black_caplet(L, K, sigma_bar, delta, p0) - delta * p0 * (np.asarray(L) - np.asarray(K))


def black_vega(L, K, sigma_bar, delta: float = 1.0, p0: float = 1.0) -> float:
    if sigma_bar <= 0:
        return 0.0
    d1, _ = _d1d2(L, K, sigma_bar)
    return float(delta * p0 * L * _INV_SQRT_2PI * math.exp(-0.5 * d1 * d1))


def implied_vol(price: float, L: float, K: float, delta: float = 1.0, p0: float = 1.0, tol: float = 1e-12) -> float:
    """Integrated volatility reproducing ``price`` under :func:`black_caplet`.

    Bracketing bisection followed by Newton polishing.
    """
    _check_black(L, K, 0.0)
    lower = delta * p0 * max(L - K, 0.0)
    upper = delta * p0 * L
    if not (lower - 1e-15 <= price < upper):
        raise PricingError(f"price {price} outside the no-arbitrage range [{lower}, {upper})")
    if price <= lower * (1.0 + 4.0 * np.finfo(float).eps):
        return 0.0
    lo, hi = 0.0, 1.0
    while black_caplet(L, K, hi, delta, p0) < price:
        lo, hi = hi, 2.0 * hi
        if hi > 1e3:
            raise PricingError("implied volatility not bracketed")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if black_caplet(L, K, mid, delta, p0) < price:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6:
            break
    s = 0.5 * (lo + hi)
    for _ in range(100):
        diff = black_caplet(L, K, s, delta, p0) - price
        vega = black_vega(L, K, s, delta, p0)
        if diff == 0.0 or vega == 0.0:
            break
        if diff > 0:
            hi = s
        else:
            lo = s
        s_new = s - diff / vega
        if not lo < s_new < hi:
            s_new = 0.5 * (lo + hi)
        # converge on the volatility, not the price: deep in/out of the money
        # a price-relative stop leaves the volatility poorly determined
        done = abs(s_new - s) <= tol * max(s, 1.0) or hi - lo <= tol * max(s, 1.0)
        s = s_new
        if done:
            break
    return s


def integrated_vol(vol_values, grid, variance=None, threshold: float = math.inf) -> float:
    """``sqrt(sum_j vol(s_j)^2 f(v(s_j))^2 (s_j - s_{j-1}))``.

    ``grid`` is ``s_0 < ... < s_J``; ``vol_values`` (and optional
    ``variance``) hold J values at ``s_1..s_J``. The factor is
    ``f(v) = exp(-max(v - threshold, 0) / threshold)``.
    """
    grid = np.asarray(grid, dtype=float)
    vol = np.asarray(vol_values, dtype=float)
    if grid.size < 2:
        raise PricingError("integration grid needs at least two points")
    if np.any(np.diff(grid) <= 0):
        raise PricingError("integration grid must be strictly increasing")
    if vol.shape != (grid.size - 1,):
        raise PricingError(f"expected {grid.size - 1} volatility values, got {vol.size}")
    if not np.all(np.isfinite(vol)):
        raise PricingError("volatility values must be finite")
    sq = vol * vol
    if variance is not None and not math.isinf(threshold):
        v = np.asarray(variance, dtype=float)
        if v.shape != vol.shape:
            raise PricingError("variance values must match the volatility values")
        sq = sq * np.exp(-2.0 * np.maximum(v - threshold, 0.0) / threshold)
    return math.sqrt(float(np.sum(sq * np.diff(grid))))


@dataclass(frozen=True)
class CapletQuote:
    """Caplet on the rate fixing at ``t_{i-1}`` and paid at ``t_i``."""

    expiry: int
    strike: float
    price: float
    std_err: float | None = None
    nominal: float = 1.0

    def __post_init__(self):
        if self.price < 0:
            raise PricingError("caplet price must be non-negative")

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        se = self.std_err or 0.0
        return (self.price - z * se, self.price + z * se)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class MCEstimate:
    price: float
    std_err: float

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return (self.price - z * self.std_err, self.price + z * self.std_err)


def cap_price(caplets, nominal: float = 1.0) -> float:
    """Nominal times the sum of the caplet prices."""
    caplets = list(caplets)
    if caplets and len({round(c.strike, 14) for c in caplets}) > 1:
        raise PricingError("caplets of a cap must share the strike")
    return nominal * float(sum(c.price for c in caplets))


def _estimate(samples: np.ndarray) -> tuple[float, float]:
    n = samples.size
    mean = float(samples.mean())
    se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def mc_caplet(scenarios: ScenarioSet, i: int, strike: float, nominal: float = 1.0) -> CapletQuote:
    """Mean of ``delta_i (L^i_{t_{i-1}} - K)^+ / B(t_i)`` over the particles."""
    N = scenarios.n_rates
    if not 1 <= i <= N:
        raise PricingError(f"expiry index {i} outside 1..{N}")
    delta = scenarios.accruals[i - 1]
    L = scenarios.fixing(i)
    # B(t_i) = B(t_{i-1}) (1 + delta L): divide through without forming the product
    payoff = delta * np.maximum(L - strike, 0.0) / (1.0 + delta * L) / scenarios.numeraire[i - 1]
    mean, se = _estimate(nominal * payoff)
    return CapletQuote(i, float(strike), max(mean, 0.0), se, nominal)


def mc_swaption(scenarios: ScenarioSet, expiry: int, tenor: int, strike: float) -> MCEstimate:
    """Payer swaption exercised at ``t_expiry`` into a swap over ``tenor`` periods."""
    j, q = int(expiry), int(tenor)
    N = scenarios.n_rates
    if q < 1 or j < 0 or j + q > N:
        raise PricingError(f"swaption {j}x{q} exceeds the {N}-period horizon")
    bonds = scenarios.bonds(j)[:, : q + 1]  # m = j..j+q
    annuity = bonds[:, 1:] @ scenarios.accruals[j : j + q]
    swap_rate = (1.0 - bonds[:, q]) / annuity
    payoff = annuity * np.maximum(swap_rate - strike, 0.0) / scenarios.numeraire[j]
    return MCEstimate(*_estimate(payoff))


def forward_swap_rate(curve: ForwardCurve, expiry: int, tenor: int) -> float:
    """Initial forward swap rate for the ``expiry x tenor`` swap."""
    dfs = curve.discount_factors()
    acc = curve.tenor.accruals
    j, q = expiry, tenor
    annuity = float(np.dot(acc[j : j + q], dfs[j + 1 : j + q + 1]))
    return float((dfs[j] - dfs[j + q]) / annuity)


def model_integrated_vol(curve: ForwardCurve, hump: HumpParams, i: int) -> float:
    """Integrated volatility of rate ``i`` under the classical model on the
    tenor grid, ``sum_{n < i-1} s_i(t_n)^2 (t_{n+1} - t_n)`` (left points, as in the simulation)."""
    dates = np.asarray(curve.tenor.dates, dtype=float)
    if not 1 <= i <= curve.n_rates:
        raise PricingError(f"expiry index {i} outside 1..{curve.n_rates}")
    if i == 1:
        return 0.0
    t = dates[: i - 1]
    s = np.asarray(scalar_vol(hump, dates[i - 1] - t), dtype=float).reshape(-1)
    return integrated_vol(s, dates[:i])


def model_caplet(curve: ForwardCurve, hump: HumpParams, i: int, strike: float, nominal: float = 1.0) -> CapletQuote:
    """Analytic caplet of the classical displaced model: Black on ``(L+alpha, K+alpha)``."""
    a = curve.displacement
    sbar = model_integrated_vol(curve, hump, i)
    dfs = curve.discount_factors()
    price = nominal * black_caplet(curve.forward(i) + a, strike + a, sbar, curve.tenor.accruals[i - 1], dfs[i])
    return CapletQuote(i, float(strike), float(price), None, nominal)
