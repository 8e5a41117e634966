"""Fixed-point calibration of the dampened volatility to a quoted caplet volatility.

Each iteration fits the hump parameters so that the dampened total variance
matches the quote given the current variance function ``v``, then simulates
the rate with the fitted volatility to obtain the next ``v``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .engine import simulate_single_rate
from .pricing import black_caplet
from .volatility import FORM_ABCD, TOY, HumpParams, scalar_vol

PARAM_BOX = (0.0, 10.0)
TIE_TOL = 1e-10


class CalibrationError(RuntimeError):
    """Raised when the optimiser cannot produce a finite fit."""


@dataclass(frozen=True)
class CalibrationTarget:
    """A single quoted caplet.

    ``fixing_time`` is the rate's fixing date ``t_{i-1}``; the integration
    grid is ``s_j = j h`` for j = 0..J with ``J h = fixing_time``.
    ``implied_vol`` is the integrated (total) Black volatility.
    """

    implied_vol: float
    fixing_time: float = 20.0 - 1.0 / 30.0
    strike: float = 0.02
    l0: float = 0.02
    threshold: float = 1.55 / 20.0
    h: float = 1.0 / 30.0
    delta: float = 1.0
    p0: float = 1.0

    def __post_init__(self):
        if not self.implied_vol > 0:
            raise ValueError("quoted implied volatility must be positive")
        if not self.threshold > 0:
            raise ValueError("variance threshold must be positive")
        if not (self.h > 0 and self.fixing_time > 0):
            raise ValueError("fixing time and step must be positive")
        J = round(self.fixing_time / self.h)
        if J < 1 or abs(J * self.h - self.fixing_time) > 1e-9 * max(1.0, self.fixing_time):
            raise ValueError("fixing time must be a positive multiple of the step h")
        if not (self.l0 > 0 and self.strike > 0):
            raise ValueError("forward and strike must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.fixing_time / self.h))

    @property
    def grid(self) -> np.ndarray:
        return self.h * np.arange(self.n_steps + 1)

    def market_price(self) -> float:
        return black_caplet(self.l0, self.strike, self.implied_vol, self.delta, self.p0)

    def vol_on_grid(self, params: HumpParams) -> np.ndarray:
        """``g(T - s_j)`` for j = 0..J."""
        return np.asarray(scalar_vol(params, self.fixing_time - self.grid), dtype=float)


def _damping_sq(v: np.ndarray, threshold: float) -> np.ndarray:
    if math.isinf(threshold):
        return np.ones_like(v)
    return np.exp(-2.0 * np.maximum(v - threshold, 0.0) / threshold)


def model_total_variance(target: CalibrationTarget, params: HumpParams, v=None) -> float:
    """``sum_{j=1}^J g(T - s_j)^2 exp(-2 max(v(s_j) - thr, 0) / thr) h``."""
    g = target.vol_on_grid(params)[1:]
    v = np.zeros(target.n_steps + 1) if v is None else np.asarray(v, dtype=float)
    return float(np.sum(g * g * _damping_sq(v[1:], target.threshold)) * target.h)


@dataclass(frozen=True)
class FitResult:
    params: HumpParams
    objective: float
    n_candidates: int


def fit_params(
    target: CalibrationTarget,
    v=None,
    previous: HumpParams | None = None,
    n_starts: int = 8,
    form: str = FORM_ABCD,
) -> FitResult:
    """Minimise ``|implied_vol^2 - model_total_variance|`` over the box [0, 10]^4.

    Bounded Nelder-Mead from ``n_starts`` Halton points plus ``previous``.
    The total variance does not identify the four parameters, so among fits
    within ``TIE_TOL`` of the best objective the one whose volatility curve
    is closest (sup norm on the grid) to ``previous`` is returned.
    """
    if n_starts < 1:
        raise ValueError("need at least one start")
    J = target.n_steps
    v = np.zeros(J + 1) if v is None else np.asarray(v, dtype=float)
    if v.shape != (J + 1,):
        raise ValueError(f"variance function must have {J + 1} grid values")
    if np.any(v < 0):
        raise ValueError("variance function must be non-negative")
    tau = target.fixing_time - target.grid[1:]
    weight = _damping_sq(v[1:], target.threshold) * target.h
    goal = target.implied_vol**2

    def objective(p):
        a, b, c, d = p
        g = (a + b * tau) * np.exp(-c * tau) + d if form == FORM_ABCD else (a * tau + d) * np.exp(-b * tau) + c
        return abs(goal - float(np.dot(g * g, weight)))

    lo, hi = PARAM_BOX
    starts = list(qmc.scale(qmc.Halton(d=4, scramble=False).random(n_starts + 1)[1:], [lo] * 4, [hi] * 4))
    if previous is not None:
        starts.insert(0, np.clip(np.array(previous.as_tuple()), lo, hi))
    candidates = []
    for x0 in starts:
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=[PARAM_BOX] * 4,
            options={"xatol": 1e-10, "fatol": 1e-15, "maxiter": 4000, "maxfev": 8000},
        )
        if np.all(np.isfinite(res.x)) and math.isfinite(res.fun):
            candidates.append((float(res.fun), HumpParams(*map(float, res.x), form=form)))
    if not candidates:
        raise CalibrationError("optimiser returned no finite candidate")
    best = min(c[0] for c in candidates)
    close = [c for c in candidates if c[0] <= best + TIE_TOL]
    if previous is not None and len(close) > 1:
        g_prev = target.vol_on_grid(previous)
        chosen = min(close, key=lambda c: float(np.max(np.abs(target.vol_on_grid(c[1]) - g_prev))))
    else:
        chosen = min(close, key=lambda c: c[0])
    return FitResult(chosen[1], chosen[0], len(candidates))


@dataclass(frozen=True)
class IterationRecord:
    """One fixed-point step: the parameters used, the fit objective and the simulated price."""

    k: int
    params: HumpParams
    objective: float
    price: float
    std_err: float
    delta: float | None

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return (self.price - z * self.std_err, self.price + z * self.std_err)

    def to_dict(self, z: float = 1.96) -> dict:
        lo, hi = self.ci(z)
        return {
            "k": self.k,
            "params": dict(zip("abcd", self.params.as_tuple())),
            "form": self.params.form,
            "objective": self.objective,
            "price": self.price,
            "std_err": self.std_err,
            "ci": [lo, hi],
            "delta": self.delta,
        }


@dataclass
class CalibrationState:
    """Result of :func:`picard_calibrate`; ``variances[k]`` is the grid function v^(k)."""

    target: CalibrationTarget
    history: list = field(default_factory=list)
    variances: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    @property
    def iteration(self) -> int:
        return self.history[-1].k if self.history else -1

    @property
    def params(self) -> HumpParams:
        return self.history[-1].params

    @property
    def variance(self) -> np.ndarray:
        return self.variances[-1]

    @property
    def deltas(self) -> list:
        return [r.delta for r in self.history if r.delta is not None]

    def relative_error(self, reference: float | None = None) -> float:
        ref = self.target.market_price() if reference is None else reference
        return abs(self.history[-1].price - ref) / ref

    def report(self, z: float = 1.96) -> dict:
        return {
            "target": {
                "implied_vol": self.target.implied_vol,
                "fixing_time": self.target.fixing_time,
                "strike": self.target.strike,
                "l0": self.target.l0,
                "threshold": self.target.threshold,
                "h": self.target.h,
                "market_price": self.target.market_price(),
            },
            "converged": self.converged,
            "message": self.message,
            "iterations": [r.to_dict(z) for r in self.history],
            "relative_error": self.relative_error(),
        }

    def to_json(self, z: float = 1.96) -> str:
        return json.dumps(self.report(z), indent=2)

    def variance_table(self) -> np.ndarray:
        """Columns: grid time, then v^(0), v^(1), ... ."""
        return np.column_stack([self.target.grid, *self.variances])


def picard_calibrate(
    target: CalibrationTarget,
    v0=None,
    n_paths: int = 100_000,
    seed: int = 1,
    tol: float = 1e-6,
    max_iter: int = 10,
    initial: HumpParams = TOY,
    n_starts: int = 8,
    workers: int = 1,
    backend: str | None = None,
) -> CalibrationState:
    """Alternate parameter fits and single-rate simulations until the fitted
    volatility curve moves less than ``tol`` (sup norm on the grid).

    Iteration 0 simulates ``initial`` with ``v0`` (default zero). Iteration
    k >= 1 fits against v^(k) and simulates with the fit and v^(k) to produce
    v^(k+1). Simulation k uses stream id k of ``seed``.
    """
    if not tol >= 0:
        raise ValueError("tolerance must be non-negative")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    J = target.n_steps
    v = np.zeros(J + 1) if v0 is None else np.asarray(v0, dtype=float).copy()
    if v.shape != (J + 1,) or np.any(v < 0):
        raise ValueError(f"initial variance must be {J + 1} non-negative grid values")
    state = CalibrationState(target)
    state.variances.append(v)
    params = initial
    objective = abs(target.implied_vol**2 - model_total_variance(target, params, v))
    delta = None
    for k in range(max_iter + 1):
        if k > 0:
            fit = fit_params(target, v, previous=params, n_starts=n_starts, form=initial.form)
            delta = float(np.max(np.abs(target.vol_on_grid(fit.params) - target.vol_on_grid(params))))
            params, objective = fit.params, fit.objective
        sim = simulate_single_rate(
            target.l0,
            target.vol_on_grid(params),
            v,
            target.threshold,
            target.h,
            target.fixing_time,
            n_paths,
            seed,
            stream=k,
            workers=workers,
            backend=backend,
        )
        payoff = target.delta * target.p0 * np.maximum(sim.terminal - target.strike, 0.0)
        price = float(payoff.mean())
        se = float(payoff.std(ddof=1) / math.sqrt(n_paths))
        state.history.append(IterationRecord(k, params, objective, price, se, delta))
        v = sim.variance
        state.variances.append(v)
        if delta is not None and delta < tol:
            state.converged = True
            state.message = f"fitted volatility moved {delta:.3g} < tol at iteration {k}"
            break
    if not state.converged:
        state.message = f"no convergence within {max_iter} iterations (last delta {delta})"
    return state
