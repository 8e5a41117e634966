"""Explosion statistics, histograms and the deflated-bond martingale test."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import ScenarioSet

DEFAULT_THRESHOLDS = (0.5, 1.0)
EXPLOSION_LEVEL = 0.5
EXPLOSION_FRACTION = 0.01


def short_rate_series(scenarios: ScenarioSet, n: int) -> np.ndarray:
    """The one-period rate fixing at ``t_n`` (``L^{n+1}_{t_n}``) across particles."""
    if not 0 <= n < scenarios.n_dates:
        raise IndexError(f"step {n} outside 0..{scenarios.n_dates - 1}")
    return scenarios.rates[n][:, 0]


@dataclass(frozen=True)
class ExcessReport:
    """``fractions[n, k]``: share of particles whose one-period rate at ``t_n`` exceeds ``thresholds[k]``."""

    times: np.ndarray
    thresholds: tuple
    fractions: np.ndarray

    def fraction(self, n: int, threshold: float) -> float:
        k = self.thresholds.index(threshold)
        return float(self.fractions[n, k])

    def explosion(self, level: float = EXPLOSION_LEVEL, limit: float = EXPLOSION_FRACTION) -> np.ndarray:
        """Per-step flag: more than ``limit`` of the scenarios above ``level``."""
        return self.fractions[:, self.thresholds.index(level)] > limit

    def rows(self):
        for n, t in enumerate(self.times):
            for k, thr in enumerate(self.thresholds):
                yield {"step": n, "time": float(t), "threshold": thr, "fraction": float(self.fractions[n, k])}


def excess_stats(scenarios: ScenarioSet, thresholds=DEFAULT_THRESHOLDS) -> ExcessReport:
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("need at least one threshold")
    N = scenarios.n_dates
    frac = np.empty((N, len(thresholds)))
    for n in range(N):
        L = short_rate_series(scenarios, n)
        for k, thr in enumerate(thresholds):
            frac[n, k] = np.count_nonzero(L > thr) / L.size
    return ExcessReport(np.asarray(scenarios.tenor_dates[:N]), thresholds, frac)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow


def histogram(scenarios: ScenarioSet, n: int, edges, m: int | None = None) -> Histogram:
    """Counts of ``L^m_{t_n}`` (default: the rate fixing at ``t_n``) in the bins ``edges``.

    Bins are ``[e_k, e_{k+1})`` except the last, which is closed; values
    outside fall into the under/overflow counters.
    """
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be a strictly increasing sequence of at least two values")
    values = short_rate_series(scenarios, n) if m is None else scenarios.rate(n, m)
    counts, _ = np.histogram(values, bins=edges)
    under = int(np.count_nonzero(values < edges[0]))
    over = int(np.count_nonzero(values > edges[-1]))
    return Histogram(edges, counts, under, over)


def tail_mass(scenarios: ScenarioSet, n: int, level: float) -> float:
    """Share of particles whose rate fixing at ``t_n`` exceeds ``level``."""
    L = short_rate_series(scenarios, n)
    return float(np.count_nonzero(L > level) / L.size)


@dataclass(frozen=True)
class MartingaleReport:
    """Per-cell deflated bond statistics; cell arrays are aligned."""

    j: np.ndarray
    m: np.ndarray
    mean: np.ndarray
    target: np.ndarray
    std_err: np.ndarray
    z: np.ndarray

    def pass_fraction(self, bound: float = 3.0, min_j: int = 1) -> float:
        """Share of cells with ``|z| <= bound`` among cells with ``j >= min_j``."""
        sel = self.j >= min_j
        return float(np.mean(np.abs(self.z[sel]) <= bound))

    def rows(self):
        for k in range(self.j.size):
            yield {
                "j": int(self.j[k]),
                "m": int(self.m[k]),
                "mean": float(self.mean[k]),
                "target": float(self.target[k]),
                "std_err": float(self.std_err[k]),
                "z": float(self.z[k]),
            }


def martingale_test(scenarios: ScenarioSet, curve=None, exact_tol: float = 1e-12) -> MartingaleReport:
    """z-scores of ``mean_p[P_p(j, m) / B_p(t_j)]`` against ``P(0, m)`` for all ``j < m``.

    ``curve`` (a discount curve with ``df(t)`` or a forward curve) supplies the targets; by
    default they come from the scenario set's common initial rates. Cells
    with zero standard error get ``z = 0`` when the mean matches to
    ``exact_tol`` (relative) and ``inf`` otherwise.
    """
    if scenarios.numeraire is None:
        raise ValueError("scenario set carries no numeraires")
    N = scenarios.n_rates
    dates = scenarios.tenor_dates
    if curve is None:
        target_all = scenarios.initial_bonds()
    elif hasattr(curve, "df"):
        target_all = np.asarray(curve.df(dates), dtype=float)
        target_all = target_all / target_all[0]
    else:
        target_all = curve.discount_factors() / curve.initial_discount
    P = scenarios.n_particles
    js, ms, means, targets, ses = [], [], [], [], []
    for j in range(scenarios.n_dates):
        db = scenarios.deflated_bonds(j)[:, 1:]  # m = j+1..N
        # centre on one particle: exact for a degenerate ensemble, less accumulation error otherwise
        y = db - db[0]
        mu = db[0] + y.mean(axis=0)
        se = y.std(axis=0, ddof=1) / np.sqrt(P) if P > 1 else np.zeros_like(mu)
        m = np.arange(j + 1, N + 1)
        js.append(np.full(m.size, j))
        ms.append(m)
        means.append(mu)
        targets.append(target_all[m])
        ses.append(se)
    j_arr, m_arr = np.concatenate(js), np.concatenate(ms)
    mean, target, se = np.concatenate(means), np.concatenate(targets), np.concatenate(ses)
    diff = mean - target
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, diff / se, 0.0)
    exact = (se == 0) & (np.abs(diff) <= exact_tol * np.abs(target))
    z = np.where((se == 0) & ~exact, np.inf, z)
    return MartingaleReport(j_arr, m_arr, mean, target, se, z)
