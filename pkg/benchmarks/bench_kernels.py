"""Compare the compiled and numpy kernel backends.

Times normal generation, a single Euler step and a full particle run, and
checks that both backends produce identical outputs on the way.

    python benchmarks/bench_kernels.py [--particles 100000] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time
import warnings

import numpy as np

from mflmm.engine import ParticleEnsemble, simulate
from mflmm.kernels import available_backends, get_backend
from mflmm.market_data import TenorStructure, bootstrap_forwards, default_curve_path, load_curve
from mflmm.volatility import RMW, MeanFieldSpec, VolatilityModel, reference_angles, threshold_from_policy


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=100_000)
    ap.add_argument("--horizon", type=int, default=50)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--variant", default="deterministic")
    args = ap.parse_args()

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        disc = load_curve(default_curve_path())
    curve = bootstrap_forwards(disc, TenorStructure.yearly(args.horizon))
    thr = threshold_from_policy("l10-displaced-squared", curve.forwards, curve.displacement)
    model = VolatilityModel(RMW, reference_angles(args.horizon), MeanFieldSpec(args.variant, thr))
    P, N = args.particles, args.horizon
    d = model.dimension(N)
    dates = curve.tenor.dates
    lam = model.loadings(dates, 0, np.zeros(N))

    backends = available_backends()
    results: dict[str, dict[str, float]] = {}
    outputs: dict[str, tuple] = {}
    for name in backends:
        k = get_backend(name)
        z = np.empty((P, d))
        t_norm = best_of(lambda: k.fill_normals(7, 0, 0, 0, 0, z), args.repeat)

        def one_step():
            ens = ParticleEnsemble.initial(curve, P)
            k.euler_step(ens.x, ens.numeraire, lam, curve.tenor.accruals, curve.displacement, 0, 1.0, z)
            return ens

        t_step = best_of(one_step, args.repeat)
        t0 = time.perf_counter()
        scen = simulate(curve, model, P, 7, backend=name)
        t_sim = time.perf_counter() - t0
        results[name] = {"normals": t_norm, "step": t_step, "simulate": t_sim}
        outputs[name] = (z.copy(), one_step().x.copy(), scen.numeraire[-1].copy())

    print(f"P = {P}, N = {N}, d = {d}, variant = {args.variant}")
    print(f"{'backend':<8} {'normals [s]':>12} {'one step [s]':>13} {'full run [s]':>13}")
    for name, r in results.items():
        print(f"{name:<8} {r['normals']:12.4f} {r['step']:13.4f} {r['simulate']:13.2f}")
    if len(backends) == 2:
        py, cy = results["python"], results["cython"]
        print("speed-up " + "  ".join(f"{key} x{py[key] / cy[key]:.1f}" for key in py))
        a, b = outputs["python"], outputs["cython"]
        print(f"normals max |dz|: {np.max(np.abs(a[0] - b[0])):.3e} (libm vs numpy SIMD transcendental rounding)")
        print(f"one-step max |dx|: {np.max(np.abs(a[1] - b[1])):.3e}")
        print(f"terminal numeraire max rel diff: {np.max(np.abs(a[2] / b[2] - 1.0)):.3e}")
    else:
        print("compiled backend not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
