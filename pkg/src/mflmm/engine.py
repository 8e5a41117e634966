"""Interacting particle system for the mean-field LMM under the spot measure.

Rates are carried as displaced logs ``x = log(L + alpha)`` and advanced with
a log-Euler step between tenor dates. Before every step the empirical
forward-measure variance ``Psi`` of each alive rate is estimated from the
whole ensemble and fed into the volatility loadings.

Particles are processed in fixed-size chunks, so the results are bitwise
identical for any number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernels import get_backend
from .market_data import ForwardCurve
from .rng import stream_key
from .volatility import VolatilityModel

DEFAULT_CHUNK = 4096


class SimulationError(RuntimeError):
    """Raised when the particle state stops being finite."""


@dataclass
class ParticleEnsemble:
    """State of P particles at tenor date ``t_n``.

    ``x[p, c]`` is the displaced log-rate of maturity ``m = c + 1``; columns
    ``c < n`` belong to rates that have fixed and are no longer updated.
    """

    x: np.ndarray
    numeraire: np.ndarray
    tenor_dates: np.ndarray
    displacement: float
    n: int = 0
    initial_bonds: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.initial_bonds is None:
            self.initial_bonds = self.bonds()[0] if self.n == 0 else None

    @classmethod
    def initial(cls, curve: ForwardCurve, n_particles: int) -> "ParticleEnsemble":
        if n_particles < 1:
            raise ValueError("need at least one particle")
        x0 = np.log(curve.forwards + curve.displacement)
        x = np.ascontiguousarray(np.broadcast_to(x0, (n_particles, x0.size)))
        return cls(x, np.ones(n_particles), np.asarray(curve.tenor.dates, float), float(curve.displacement))

    @property
    def n_particles(self) -> int:
        return self.x.shape[0]

    @property
    def n_rates(self) -> int:
        return self.x.shape[1]

    @property
    def accruals(self) -> np.ndarray:
        return np.diff(self.tenor_dates)

    def rates(self) -> np.ndarray:
        """Undisplaced rates ``L`` of the maturities still alive or fixing now, shape (P, N - n)."""
        return np.exp(self.x[:, self.n:]) - self.displacement

    def bonds(self) -> np.ndarray:
        """Per-particle ``P_p(n, m)`` for m = n+1..N, shape (P, N - n)."""
        return np.cumprod(1.0 / (1.0 + self.accruals[self.n:] * self.rates()), axis=1)


def weighted_variance(values, weights) -> np.ndarray:
    """``mean_p[(L_p - mean_q(L_q w_q))^2 w_p]`` along axis 0, floored at 0.

    Values are shifted by the first particle before reducing, so an ensemble
    of identical particles with unit weights returns exactly 0.
    """
    L = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if L.shape[0] < 2:
        raise ValueError("the variance estimate needs at least two particles")
    a = L[0]
    y = L - a
    mean_w = w.mean(axis=0)
    yw = np.where(w == 0.0, 0.0, y * w)
    centre = yw.mean(axis=0) - a * (1.0 - mean_w)
    dev = y - centre
    out = np.where(w == 0.0, 0.0, dev * dev * w).mean(axis=0)
    return np.maximum(out, 0.0)


def psi_row(ensemble: ParticleEnsemble) -> np.ndarray:
    """Variance estimates at ``t_n`` for maturities m = n+1..N (weights from the deflated bonds)."""
    n = ensemble.n
    if ensemble.initial_bonds is None:
        raise ValueError("ensemble lacks its initial bond prices")
    w = ensemble.bonds() / (ensemble.numeraire[:, None] * ensemble.initial_bonds[None, n:])
    return weighted_variance(ensemble.rates(), w)


def compute_psi(ensemble: ParticleEnsemble, j: int, m: int) -> float:
    """Variance estimate of rate ``m`` (1-based) at the ensemble's current date ``t_j``."""
    if j != ensemble.n:
        raise ValueError(f"ensemble is at t_{ensemble.n}, not t_{j}")
    if not (j + 1 <= m <= ensemble.n_rates):
        raise ValueError(f"rate {m} has fixed before t_{j}")
    return float(psi_row(ensemble)[m - 1 - j])


def _chunks(n_rows: int, chunk_size: int) -> list[tuple[int, int]]:
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    return [(s, min(s + chunk_size, n_rows)) for s in range(0, n_rows, chunk_size)]


def _run(pool, fn: Callable, bounds):
    if pool is None:
        return [fn(b) for b in bounds]
    return list(pool.map(fn, bounds))


def step(
    ensemble: ParticleEnsemble,
    loadings: np.ndarray,
    seed: int,
    stream: int = 0,
    *,
    backend: str | None = None,
    chunk_size: int = DEFAULT_CHUNK,
    pool: ThreadPoolExecutor | None = None,
    normals: np.ndarray | None = None,
    include_fixing_rate: bool = False,
) -> ParticleEnsemble:
    """Advance the ensemble from ``t_n`` to ``t_{n+1}`` in place.

    ``loadings`` is the (N, d) matrix of volatility vectors at ``t_n``.
    ``normals`` (P, d) overrides the generated Brownian increments.

    The drift of rate m sums over the rates k = n+2..m that stay alive
    during the step: the numeraire accrued to ``t_{n+1}`` is already known
    at ``t_n``, so deflated bonds over the step depend on those rates only.
    ``include_fixing_rate=True`` also adds the rate fixing at ``t_n`` (k = n+1),
    which biases deflated bonds downwards.
    """
    n = ensemble.n
    N = ensemble.n_rates
    if n >= N:
        raise ValueError("all rates have fixed; nothing left to step")
    kern = get_backend(backend)
    lam = np.ascontiguousarray(loadings, dtype=float)
    if lam.ndim != 2 or lam.shape[0] != N:
        raise ValueError(f"loadings must have shape (N={N}, d)")
    delta = np.ascontiguousarray(ensemble.accruals)
    dt = float(ensemble.tenor_dates[n + 1] - ensemble.tenor_dates[n])
    k0, k1 = stream_key(seed, stream)
    d = lam.shape[1]
    drift_start = n if include_fixing_rate else n + 1

    def work(bounds):
        r0, r1 = bounds
        if normals is None:
            z = np.empty((r1 - r0, d))
            kern.fill_normals(k0, k1, r0, n, 0, z)
        else:
            z = np.ascontiguousarray(normals[r0:r1], dtype=float)
        xs = ensemble.x[r0:r1]
        kern.euler_step(xs, ensemble.numeraire[r0:r1], lam, delta, ensemble.displacement, n, dt, z, drift_start)
        bad = ~np.isfinite(xs[:, n + 1:])
        bad_num = ~np.isfinite(ensemble.numeraire[r0:r1])
        if bad.any() or bad_num.any():
            if bad.any():
                p, c = np.argwhere(bad)[0]
                where = f"particle {r0 + p}, maturity {n + 2 + c}"
            else:
                where = f"particle {r0 + int(np.argmax(bad_num))}, numeraire"
            raise SimulationError(f"non-finite state after step {n} -> {n + 1} at {where}")

    _run(pool, work, _chunks(ensemble.n_particles, chunk_size))
    ensemble.n = n + 1
    return ensemble


@dataclass
class ScenarioSet:
    """Simulated rates on the tenor dates.

    ``rates[n]`` has shape (P, N - n) and holds ``L_{t_n}^m`` for m = n+1..N
    (the rate m = n+1 is the one fixing at ``t_n``). ``numeraire`` is
    (N + 1, P) with ``B(t_0) = 1``; ``psi`` is (N, N) with ``psi[n, m-1]``
    the variance estimate used at ``t_n`` (NaN where the rate has fixed).
    A run stopped early at ``t_K`` keeps ``rates[0..K]`` and ``numeraire[0..K]``.
    """

    tenor_dates: np.ndarray
    displacement: float
    rates: list
    numeraire: np.ndarray
    psi: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def n_rates(self) -> int:
        return len(self.tenor_dates) - 1

    @property
    def n_particles(self) -> int:
        return self.numeraire.shape[1]

    @property
    def n_dates(self) -> int:
        """Number of tenor dates with recorded rates (N for a complete run)."""
        return len(self.rates)

    @property
    def complete(self) -> bool:
        return self.numeraire.shape[0] == self.n_rates + 1

    @property
    def accruals(self) -> np.ndarray:
        return np.diff(self.tenor_dates)

    def rate(self, n: int, m: int) -> np.ndarray:
        """``L_{t_n}^m`` across particles; for n beyond the fixing, the frozen fixing."""
        if not 1 <= m <= self.n_rates:
            raise IndexError(f"maturity {m} outside 1..{self.n_rates}")
        n = min(n, m - 1)
        if n >= self.n_dates:
            raise IndexError(f"no rates recorded at step {n} (run stopped at {self.n_dates - 1})")
        return self.rates[n][:, m - 1 - n]

    def fixing(self, m: int) -> np.ndarray:
        return self.rate(m - 1, m)

    def bonds(self, j: int) -> np.ndarray:
        """``P_p(j, m)`` for m = j..N, shape (P, N - j + 1); column 0 is 1."""
        if not 0 <= j <= self.n_rates:
            raise IndexError(f"tenor index {j} outside 0..{self.n_rates}")
        P = self.n_particles
        if j == self.n_rates:
            return np.ones((P, 1))
        if j >= self.n_dates:
            raise IndexError(f"no rates recorded at step {j} (run stopped at {self.n_dates - 1})")
        disc = np.cumprod(1.0 / (1.0 + self.accruals[j:] * self.rates[j]), axis=1)
        return np.concatenate([np.ones((P, 1)), disc], axis=1)

    def deflated_bonds(self, j: int) -> np.ndarray:
        """``P_p(j, m) / B_p(t_j)`` for m = j..N."""
        return self.bonds(j) / self.numeraire[j][:, None]

    def initial_bonds(self) -> np.ndarray:
        """``P(0, m)`` for m = 0..N from the common initial rates."""
        return self.bonds(0)[0]


def simulate(
    curve: ForwardCurve,
    vol_model: VolatilityModel,
    n_particles: int,
    seed: int,
    *,
    stream: int = 0,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    backend: str | None = None,
    include_fixing_rate: bool = False,
    until: int | None = None,
) -> ScenarioSet:
    """Run the particle system over all tenor dates ``t_0 .. t_N``.

    At each ``t_n`` the variance row is estimated, loadings are built from
    it and the ensemble takes one step. The final step only accrues the
    numeraire to ``t_N``. ``until = K < N`` stops once the state at ``t_K``
    is recorded; the dynamics up to ``t_K`` are identical to a full run.
    """
    if n_particles < 2:
        raise ValueError("the particle system needs at least two particles")
    N = curve.n_rates
    dates = np.asarray(curve.tenor.dates, dtype=float)
    vol_model.dimension(N)  # validates the variant against N
    if until is not None and not 0 <= until <= N:
        raise ValueError(f"until must lie in 0..{N}")
    stop = N if until is None else until
    ens = ParticleEnsemble.initial(curve, n_particles)
    rates = []
    psi = np.full((N, N), np.nan)
    numeraire = np.empty((N + 1 if stop == N else stop + 1, n_particles))
    numeraire[0] = ens.numeraire
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for n in range(N):
            rates.append(ens.rates())
            psi[n, n:] = psi_row(ens)
            if n == stop:
                break
            lam = vol_model.loadings(dates, n, psi[n])
            step(
                ens,
                lam,
                seed,
                stream,
                backend=backend,
                chunk_size=chunk_size,
                pool=pool,
                include_fixing_rate=include_fixing_rate,
            )
            numeraire[n + 1] = ens.numeraire
    finally:
        if pool is not None:
            pool.shutdown()
    meta = {
        "seed": int(seed),
        "stream": int(stream),
        "n_particles": int(n_particles),
        "n_rates": N,
        "variant": vol_model.mean_field.variant.value,
        "threshold": vol_model.mean_field.threshold,
        "hump": {**dict(zip("abcd", vol_model.hump.as_tuple())), "form": vol_model.hump.form},
        "displacement": curve.displacement,
        "backend": get_backend(backend).BACKEND,
        "include_fixing_rate": bool(include_fixing_rate),
        "chunk_size": int(chunk_size),
        "until": stop,
    }
    return ScenarioSet(dates, float(curve.displacement), rates, numeraire, psi, meta)


@dataclass
class SingleRateResult:
    """Output of :func:`simulate_single_rate`.

    ``times`` is the grid ``0, h, ..., t_end``; ``mean``/``variance`` are the
    cross-path moments of ``L`` at each grid time and ``log_variance`` the
    sample variance of ``log L`` at ``t_end``.
    """

    times: np.ndarray
    terminal: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    log_variance: float


def _grid_values(f, times: np.ndarray) -> np.ndarray:
    if f is None:
        return np.zeros_like(times)
    if callable(f):
        return np.asarray(np.broadcast_to(f(times), times.shape), dtype=float)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return np.full_like(times, float(arr))
    if arr.shape != times.shape:
        raise ValueError(f"grid function has {arr.size} values, expected {times.size}")
    return arr


def simulate_single_rate(
    l0: float,
    vol,
    variance=None,
    threshold: float = math.inf,
    h: float = 1.0 / 30.0,
    t_end: float = 20.0 - 1.0 / 30.0,
    n_paths: int = 100_000,
    seed: int = 0,
    *,
    stream: int = 0,
    workers: int = 1,
    chunk_size: int = DEFAULT_CHUNK,
    backend: str | None = None,
) -> SingleRateResult:
    """Log-Euler paths of ``dL = L sigma(t) f(v(t)) dW`` under the rate's own forward measure.

    ``vol`` and ``variance`` are callables of time or arrays on the grid
    ``s_j = j h``; the step from ``s_{j-1}`` to ``s_j`` uses their values at
    ``s_j``, the same points as the Riemann sum in the calibration objective.
    ``f(v) = exp(-max(v - threshold, 0) / threshold)``.
    """
    if not h > 0:
        raise ValueError("step size h must be positive")
    J = int(round(t_end / h))
    if J < 1 or abs(J * h - t_end) > 1e-9 * max(1.0, t_end):
        raise ValueError("t_end must be a positive multiple of h")
    if n_paths < 2:
        raise ValueError("need at least two paths")
    if not l0 > 0:
        raise ValueError("initial rate must be positive")
    times = h * np.arange(J + 1)
    sig = _grid_values(vol, times)
    v = _grid_values(variance, times)
    if math.isinf(threshold):
        factor = np.ones_like(v)
    else:
        factor = np.exp(-np.maximum(v - threshold, 0.0) / threshold)
    s = (sig * factor)[1:]
    drift = -0.5 * s * s * h
    diff = s * math.sqrt(h)
    kern = get_backend(backend)
    k0, k1 = stream_key(seed, stream)
    x0 = math.log(l0)
    terminal = np.empty(n_paths)

    def work(bounds):
        r0, r1 = bounds
        z = np.empty((r1 - r0, J))
        kern.fill_normals(k0, k1, r0, 0, 0, z)
        x = np.empty((r1 - r0, J + 1))
        x[:, 0] = x0
        np.cumsum(drift + diff * z, axis=1, out=x[:, 1:])
        x[:, 1:] += x0
        L = np.exp(x)
        terminal[r0:r1] = L[:, -1]
        y = L - l0
        mu = y.mean(axis=0)
        m2 = ((y - mu) ** 2).sum(axis=0)
        lmu = x[:, -1].mean()
        lm2 = float(((x[:, -1] - lmu) ** 2).sum())
        return r1 - r0, mu, m2, lmu, lm2

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        parts = _run(pool, work, _chunks(n_paths, chunk_size))
    finally:
        if pool is not None:
            pool.shutdown()
    # merge chunk moments in chunk order (parallel-variance update)
    cnt, mu, m2, lmu, lm2 = parts[0]
    for nb, mub, m2b, lmub, lm2b in parts[1:]:
        tot = cnt + nb
        d = mub - mu
        mu = mu + d * (nb / tot)
        m2 = m2 + m2b + d * d * (cnt * nb / tot)
        dl = lmub - lmu
        lmu = lmu + dl * (nb / tot)
        lm2 = lm2 + lm2b + dl * dl * (cnt * nb / tot)
        cnt = tot
    variance_path = np.maximum(m2 / n_paths, 0.0)
    return SingleRateResult(times, terminal, mu + l0, variance_path, lm2 / n_paths)
