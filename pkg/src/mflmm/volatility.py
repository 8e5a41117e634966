"""Hump volatility, correlation angles and the mean-field volatility variants."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

FORM_HUMP = "hump"
FORM_ABCD = "abcd"

#: Correlation cos(theta_m - theta_n) between maturities 1, 6, 11, ..., 46 for the
#: reference angle choice (two-decimal values).
REFERENCE_CORRELATION = np.array(
    [
        [1.00, 0.99, 0.95, 0.89, 0.81, 0.71, 0.59, 0.45, 0.31, 0.19],
        [0.99, 1.00, 0.99, 0.95, 0.89, 0.81, 0.71, 0.59, 0.45, 0.34],
        [0.95, 0.99, 1.00, 0.99, 0.95, 0.89, 0.81, 0.71, 0.59, 0.48],
        [0.89, 0.95, 0.99, 1.00, 0.99, 0.95, 0.89, 0.81, 0.71, 0.61],
        [0.81, 0.89, 0.95, 0.99, 1.00, 0.99, 0.95, 0.89, 0.81, 0.73],
        [0.71, 0.81, 0.89, 0.95, 0.99, 1.00, 0.99, 0.95, 0.89, 0.83],
        [0.59, 0.71, 0.81, 0.89, 0.95, 0.99, 1.00, 0.99, 0.95, 0.90],
        [0.45, 0.59, 0.71, 0.81, 0.89, 0.95, 0.99, 1.00, 0.99, 0.96],
        [0.31, 0.45, 0.59, 0.71, 0.81, 0.89, 0.95, 0.99, 1.00, 0.99],
        [0.19, 0.34, 0.48, 0.61, 0.73, 0.83, 0.90, 0.96, 0.99, 1.00],
    ]
)
REFERENCE_ANCHORS = np.arange(1, 47, 5)


class Variant(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    TAMING = "taming"
    DECORRELATE = "decorrelate"
    ANTICORRELATE = "anticorrelate"

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).lower())
        except ValueError:
            raise ValueError(f"unknown mean-field variant {name!r}; choose from {[v.value for v in cls]}") from None


@dataclass(frozen=True)
class HumpParams:
    """Four-parameter hump shape.

    ``form="hump"``: ``(a*tau + d) * exp(-b*tau) + c``.
    ``form="abcd"``: ``(a + b*tau) * exp(-c*tau) + d``.
    """

    a: float
    b: float
    c: float
    d: float
    form: str = FORM_HUMP

    def __post_init__(self):
        if self.form not in (FORM_HUMP, FORM_ABCD):
            raise ValueError(f"unknown hump form {self.form!r}")

    def __call__(self, tau):
        return scalar_vol(self, tau)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)


#: Normal-state curve (0.145 at tau = 0, peak ~0.23 near 1.3y, 0.075 long end).
RMW = HumpParams(0.07, 0.2, 0.6, 0.075, FORM_ABCD)
#: The same four numbers in the hump form: 0.6-0.76 everywhere, explosive over 50 years.
RMW_LITERAL = HumpParams(0.07, 0.2, 0.6, 0.075, FORM_HUMP)
EXCITED = HumpParams(0.01, 0.05, 0.2, 0.14, FORM_HUMP)
TOY = HumpParams(0.14, 0.01, 0.05, 0.2, FORM_ABCD)


def scalar_vol(params: HumpParams, tau):
    """Scalar instantaneous volatility at time-to-fixing ``tau``."""
    tau = np.asarray(tau, dtype=float)
    a, b, c, d = params.as_tuple()
    if params.form == FORM_HUMP:
        out = (a * tau + d) * np.exp(-b * tau) + c
    else:
        out = (a + b * tau) * np.exp(-c * tau) + d
    return float(out) if out.ndim == 0 else out


def angles_from_corr(corr_row, anchors=REFERENCE_ANCHORS, n_maturities: int | None = None) -> np.ndarray:
    """Angles theta_m (m = 1..n) reproducing the correlations of maturity 1.

    ``theta = arccos(corr(1, m))`` at the anchor maturities, linear in m in
    between and linearly extrapolated (slope of the last segment, capped at
    pi) beyond the last anchor.
    """
    row = np.asarray(corr_row, dtype=float)
    anchors = np.asarray(anchors, dtype=float)
    if row.shape != anchors.shape:
        raise ValueError("one correlation per anchor maturity is required")
    if np.any(row <= 0) or np.any(row > 1):
        raise ValueError("correlations must lie in (0, 1]")
    if row[0] != 1.0:
        raise ValueError("the first entry must be the self-correlation 1")
    theta = np.arccos(row)
    n = int(anchors[-1]) if n_maturities is None else int(n_maturities)
    m = np.arange(1, n + 1, dtype=float)
    out = np.interp(m, anchors, theta)
    if anchors.size > 1:
        slope = (theta[-1] - theta[-2]) / (anchors[-1] - anchors[-2])
        beyond = m > anchors[-1]
        out[beyond] = np.minimum(theta[-1] + slope * (m[beyond] - anchors[-1]), math.pi)
    return out


def reference_angles(n_maturities: int) -> np.ndarray:
    return angles_from_corr(REFERENCE_CORRELATION[0], REFERENCE_ANCHORS, n_maturities)


def correlation_matrix(angles) -> np.ndarray:
    th = np.asarray(angles, dtype=float)
    return np.cos(th[:, None] - th[None, :])


@dataclass(frozen=True)
class MeanFieldSpec:
    variant: Variant = Variant.DETERMINISTIC
    threshold: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if not self.threshold > 0:
            raise ValueError("variance threshold must be positive")

    def dimension(self, n_rates: int) -> int:
        """Brownian dimension: 2 for the two-factor variants, one per rate otherwise."""
        if self.variant in (Variant.DETERMINISTIC, Variant.TAMING):
            return 2
        if self.variant is Variant.ANTICORRELATE and n_rates % 2:
            raise ValueError("anti-correlation needs an even number of rates")
        return n_rates


def mf_factor(variant, psi, threshold: float):
    """Volatility multiplier ``exp(-max(psi - threshold, 0) / threshold)`` for taming, else 1."""
    if Variant.parse(variant) is not Variant.TAMING:
        return np.ones_like(np.asarray(psi, dtype=float)) if np.ndim(psi) else 1.0
    psi = np.asarray(psi, dtype=float)
    if np.any(psi < 0):
        raise ValueError("variance estimate must be non-negative")
    if math.isinf(threshold):
        out = np.ones_like(psi)
    else:
        out = np.exp(-np.maximum(psi - threshold, 0.0) / threshold)
    return float(out) if out.ndim == 0 else out


def deterministic_vector(m: int, t: float, fixing_time: float, hump: HumpParams, angles) -> np.ndarray:
    """Two-factor loading of rate ``m`` (1-based) at time t <= its fixing time."""
    s = scalar_vol(hump, fixing_time - t)
    th = angles[m - 1]
    return np.array([s * math.cos(th), s * math.sin(th)])


def vol_vector(
    spec: MeanFieldSpec,
    m: int,
    t: float,
    psi: float,
    hump: HumpParams,
    angles,
    fixing_time: float,
    n_rates: int,
) -> np.ndarray:
    """Instantaneous loading ``lambda^m(t, psi)`` in R^d for one maturity."""
    if t > fixing_time + 1e-12:
        raise ValueError(f"rate {m} has fixed at {fixing_time}; t={t} is past it")
    if psi < 0:
        raise ValueError("variance estimate must be non-negative")
    base = deterministic_vector(m, t, fixing_time, hump, angles)
    dim = spec.dimension(n_rates)
    if spec.variant is Variant.DETERMINISTIC:
        return base
    if spec.variant is Variant.TAMING:
        return base * mf_factor(Variant.TAMING, psi, spec.threshold)
    norm = math.hypot(base[0], base[1])
    out = np.zeros(dim)
    if spec.variant is Variant.DECORRELATE:
        keep = math.exp(-psi / spec.threshold)
        out[:2] = keep * base
        out[m - 1] += 1.0 - keep
        size = np.linalg.norm(out)
        return out * (norm / size) if size > 0 else out
    # anti-correlation
    if psi <= spec.threshold:
        out[:2] = base
    else:
        n = (m + 1) // 2
        out[n - 1] = norm if m % 2 else -norm
    return out


@dataclass(frozen=True)
class VolatilityModel:
    """Deterministic hump + angles, combined with a mean-field variant."""

    hump: HumpParams
    angles: np.ndarray
    mean_field: MeanFieldSpec = MeanFieldSpec()

    def dimension(self, n_rates: int) -> int:
        return self.mean_field.dimension(n_rates)

    def loadings(self, tenor_dates, n: int, psi) -> np.ndarray:
        """Loading matrix (N, d) at tenor date ``t_n``.

        Rows ``n..N-1`` (rates m = n+1..N, still alive or fixing at t_n) are
        filled from ``psi[c]``; earlier rows are zero.
        """
        dates = np.asarray(tenor_dates, dtype=float)
        n_rates = dates.size - 1
        dim = self.dimension(n_rates)
        t = dates[n]
        out = np.zeros((n_rates, dim))
        cols = np.arange(n, n_rates)
        fixing = dates[cols]  # t_{m-1} for m = c + 1
        s = np.asarray(scalar_vol(self.hump, fixing - t), dtype=float).reshape(-1)
        th = np.asarray(self.angles, dtype=float)[cols]
        base = np.stack([s * np.cos(th), s * np.sin(th)], axis=1)
        p = np.asarray(psi, dtype=float)[cols]
        variant = self.mean_field.variant
        thr = self.mean_field.threshold
        if variant is Variant.DETERMINISTIC:
            out[cols, :2] = base
        elif variant is Variant.TAMING:
            out[cols, :2] = base * np.asarray(mf_factor(variant, p, thr)).reshape(-1, 1)
        elif variant is Variant.DECORRELATE:
            keep = np.exp(-p / thr)
            block = np.zeros((cols.size, dim))
            block[:, :2] = keep[:, None] * base
            block[np.arange(cols.size), cols] += 1.0 - keep
            size = np.linalg.norm(block, axis=1)
            scale = np.divide(np.abs(s), size, out=np.zeros_like(size), where=size > 0)
            out[cols] = block * scale[:, None]
        else:
            above = p > thr
            out[cols[~above], :2] = base[~above]
            m = cols[above] + 1
            n_idx = (m + 1) // 2 - 1
            sign = np.where(m % 2 == 1, 1.0, -1.0)
            out[cols[above], n_idx] = sign * np.abs(s[above])
        return out


THRESHOLD_POLICIES = ("l10-displaced-squared", "l10-squared", "fixed:<value>", "inf")


def threshold_from_policy(policy, forwards, displacement: float = 0.0) -> float:
    """Variance threshold from a policy.

    ``l10-squared``            square of the initial 10-period forward rate
    ``l10-displaced-squared``  square of the displaced rate ``L_0^10 + displacement``
    ``fixed:<value>`` or a number, and ``inf`` (never active) are also accepted.
    """
    if isinstance(policy, (int, float)):
        value = float(policy)
    else:
        text = str(policy).strip().lower().replace("_", "-")
        if text in ("l10-squared", "l10-displaced-squared"):
            fwd = np.asarray(forwards, dtype=float)
            if fwd.size < 10:
                raise ValueError(f"{text} threshold needs at least 10 forward rates")
            shift = displacement if text == "l10-displaced-squared" else 0.0
            value = float((fwd[9] + shift) ** 2)
        elif text in ("inf", "none", "off"):
            value = math.inf
        elif text.startswith("fixed:"):
            value = float(text.split(":", 1)[1])
        else:
            value = float(text)
    if not value > 0:
        raise ValueError(f"variance threshold must be positive, got {value}")
    return value
