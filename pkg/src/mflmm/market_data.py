"""Initial term structure: curve files, tenor grids and forward bootstrapping."""
from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ANNUAL = "annual"
CONTINUOUS = "continuous"
DEFAULT_DISPLACEMENT = 0.01
_SEP = re.compile(r"[,;\s]+")


class CurveError(ValueError):
    """Raised for malformed or inconsistent curve input."""


@dataclass(frozen=True)
class TenorStructure:
    """Reset/payment dates ``t_0 < t_1 < ... < t_N`` in years."""

    dates: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype=float)
        if dates.ndim != 1 or dates.size < 2:
            raise CurveError("tenor structure needs at least two dates (N >= 1)")
        if not np.all(np.isfinite(dates)) or dates[0] < 0:
            raise CurveError("tenor dates must be finite and non-negative")
        if np.any(np.diff(dates) <= 0):
            raise CurveError("tenor dates must be strictly increasing")
        dates.setflags(write=False)
        object.__setattr__(self, "dates", dates)

    @classmethod
    def yearly(cls, horizon: int) -> "TenorStructure":
        """Dates ``0, 1, ..., horizon``."""
        return cls(np.arange(horizon + 1, dtype=float))

    @property
    def n_rates(self) -> int:
        return self.dates.size - 1

    @property
    def accruals(self) -> np.ndarray:
        return np.diff(self.dates)

    @property
    def horizon(self) -> float:
        return float(self.dates[-1])


@dataclass(frozen=True)
class DiscountCurve:
    """Discount factors ``P(0, t)`` at node maturities.

    ``rates`` holds the spot rates the factors were built from (or implied
    from them under ``convention``); :meth:`df` interpolates linearly in
    the spot rate between nodes.
    """

    maturities: np.ndarray
    discount_factors: np.ndarray
    convention: str = ANNUAL
    rates: np.ndarray = field(default=None)

    def __post_init__(self):
        mats = np.asarray(self.maturities, dtype=float)
        dfs = np.asarray(self.discount_factors, dtype=float)
        if mats.shape != dfs.shape or mats.ndim != 1 or mats.size == 0:
            raise CurveError("maturities and discount factors must be 1-d arrays of equal length")
        if np.any(np.diff(mats) <= 0):
            raise CurveError("curve maturities must be strictly increasing")
        if mats[0] < 0:
            raise CurveError("curve maturities must be non-negative")
        if not np.all(np.isfinite(dfs)) or np.any(dfs <= 0):
            raise CurveError("discount factors must be positive and finite")
        if self.convention not in (ANNUAL, CONTINUOUS):
            raise CurveError(f"unknown compounding convention {self.convention!r}")
        rates = self.rates
        if rates is None:
            rates = _rates_from_dfs(mats, dfs, self.convention)
        rates = np.asarray(rates, dtype=float)
        for arr in (mats, dfs, rates):
            arr.setflags(write=False)
        object.__setattr__(self, "maturities", mats)
        object.__setattr__(self, "discount_factors", dfs)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def from_spot_rates(cls, maturities, rates, convention: str = ANNUAL) -> "DiscountCurve":
        mats = np.asarray(maturities, dtype=float)
        rates = np.asarray(rates, dtype=float)
        if not np.all(np.isfinite(rates)):
            raise CurveError("spot rates must be finite")
        dfs = _dfs_from_rates(mats, rates, convention)
        curve = cls(mats, dfs, convention, rates)
        if np.any(np.diff(curve.discount_factors) > 0):
            warnings.warn(
                "discount factors are not non-increasing (negative forward rates); "
                "the displaced model can still handle this",
                stacklevel=2,
            )
        return curve

    def spot_rate(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t > self.maturities[-1] + 1e-12):
            raise CurveError(f"maturity {np.max(t)} outside curve support (last node {self.maturities[-1]})")
        return np.interp(t, self.maturities, self.rates)

    def df(self, t):
        """Discount factor ``P(0, t)``; flat-rate extrapolation before the first node."""
        t_arr = np.asarray(t, dtype=float)
        out = _dfs_from_rates(t_arr, self.spot_rate(t_arr), self.convention)
        # exact node values, no round trip through the rate
        idx = np.searchsorted(self.maturities, t_arr)
        idx = np.clip(idx, 0, self.maturities.size - 1)
        hit = self.maturities[idx] == t_arr
        out = np.where(hit, self.discount_factors[idx], out)
        out = np.where(t_arr == 0.0, 1.0, out)
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "maturities": self.maturities.tolist(),
            "spot_rates": self.rates.tolist(),
            "discount_factors": self.discount_factors.tolist(),
        }


@dataclass(frozen=True)
class ForwardCurve:
    """Initial forward rates ``L_0^i`` on a tenor structure, plus the displacement."""

    tenor: TenorStructure
    forwards: np.ndarray
    displacement: float = DEFAULT_DISPLACEMENT
    initial_discount: float = 1.0

    def __post_init__(self):
        fwd = np.asarray(self.forwards, dtype=float)
        if fwd.shape != (self.tenor.n_rates,):
            raise CurveError(f"expected {self.tenor.n_rates} forwards, got shape {fwd.shape}")
        if self.displacement < 0:
            raise CurveError("displacement must be non-negative")
        if np.any(fwd + self.displacement < 0):
            i = int(np.argmin(fwd + self.displacement)) + 1
            raise CurveError(f"L_0^{i} + displacement is negative; increase the displacement")
        fwd.setflags(write=False)
        object.__setattr__(self, "forwards", fwd)

    @property
    def n_rates(self) -> int:
        return self.tenor.n_rates

    def discount_factors(self) -> np.ndarray:
        """``P(0, t_m)`` for m = 0..N rebuilt from the forwards."""
        growth = 1.0 + self.tenor.accruals * self.forwards
        return self.initial_discount * np.concatenate(([1.0], np.cumprod(1.0 / growth)))

    def forward(self, i: int) -> float:
        """``L_0^i`` for 1-based ``i``."""
        return float(self.forwards[i - 1])

    def to_dict(self) -> dict:
        return {
            "tenor_dates": self.tenor.dates.tolist(),
            "forwards": self.forwards.tolist(),
            "displacement": self.displacement,
            "initial_discount": self.initial_discount,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _dfs_from_rates(mats, rates, convention):
    if convention == ANNUAL:
        with np.errstate(invalid="raise"):
            return np.power(1.0 + rates, -mats)
    if convention == CONTINUOUS:
        return np.exp(-rates * mats)
    raise CurveError(f"unknown compounding convention {convention!r}")


def _rates_from_dfs(mats, dfs, convention):
    out = np.zeros_like(mats)
    pos = mats > 0
    if convention == ANNUAL:
        out[pos] = np.power(dfs[pos], -1.0 / mats[pos]) - 1.0
    else:
        out[pos] = -np.log(dfs[pos]) / mats[pos]
    if not np.all(pos) and np.any(pos):
        out[~pos] = out[pos][0]
    return out


def _parse_rows(text: str) -> tuple[list[float], list[float]]:
    mats: list[float] = []
    rates: list[float] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c for c in _SEP.split(line) if c]
        if len(cells) < 2:
            raise CurveError(f"line {lineno}: expected two columns (maturity, spot rate)")
        try:
            m, r = float(cells[0]), float(cells[1])
        except ValueError:
            if not mats:
                continue  # header line
            raise CurveError(f"line {lineno}: cannot parse {line!r}") from None
        if not (math.isfinite(m) and math.isfinite(r)):
            raise CurveError(f"line {lineno}: non-finite value")
        mats.append(m)
        rates.append(r)
    if not mats:
        raise CurveError("curve file contains no data rows")
    return mats, rates


def load_curve(source, convention: str = ANNUAL) -> DiscountCurve:
    """Read a two-column (maturity in years, spot rate) text file.

    Separators may be commas, semicolons, tabs or whitespace; a header line
    and ``#`` comments are skipped. Rates are decimals (0.02 = 2%).
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        path = Path(source)
        if not path.is_file():
            raise CurveError(f"curve file {str(path)!r} not found")
        text = path.read_text()
    mats, rates = _parse_rows(text)
    if any(b <= a for a, b in zip(mats, mats[1:])):
        raise CurveError("curve maturities must be strictly increasing")
    return DiscountCurve.from_spot_rates(mats, rates, convention)


def default_curve_path() -> Path:
    return Path(__file__).parent / "data" / "eur_rfr_2020_illustrative.csv"


def bootstrap_forwards(
    curve: DiscountCurve,
    tenor: TenorStructure,
    displacement: float = DEFAULT_DISPLACEMENT,
) -> ForwardCurve:
    """Simple forward rates ``L_0^i = (P(0,t_{i-1}) / P(0,t_i) - 1) / delta_i``."""
    if tenor.dates[-1] > curve.maturities[-1] + 1e-12:
        raise CurveError(
            f"tenor date {tenor.dates[-1]} outside curve support (last node {curve.maturities[-1]})"
        )
    dfs = np.asarray(curve.df(tenor.dates), dtype=float)
    fwd = (dfs[:-1] / dfs[1:] - 1.0) / tenor.accruals
    return ForwardCurve(tenor, fwd, displacement, initial_discount=float(dfs[0]))
