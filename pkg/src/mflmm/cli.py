"""Command line entry point: ``mflmm {simulate,price,calibrate,diagnose,reproduce-table1}``.

Exit codes: 0 success, 1 user error (bad arguments, config or input files),
2 runtime failure. Failures print a JSON error report on stderr and, when
the output directory is usable, also write it to ``error.json``.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationTarget, picard_calibrate
from .config import PRESETS, ConfigError, RunConfig, preset
from .diagnostics import excess_stats, histogram, martingale_test
from .engine import ScenarioSet, SimulationError, simulate
from .kernels import get_backend
from .market_data import CurveError, TenorStructure, bootstrap_forwards, load_curve
from .pricing import PricingError, forward_swap_rate, mc_caplet, mc_swaption, model_caplet
from .scenario_io import (
    ScenarioFormatError,
    file_sha256,
    read_binary,
    spec_hash,
    write_binary,
    write_csv,
    write_json,
    write_rows,
)
from .volatility import HumpParams, MeanFieldSpec, VolatilityModel, reference_angles, threshold_from_policy

EXIT_OK, EXIT_USER, EXIT_RUNTIME = 0, 1, 2
TABLE1_REFERENCE = {"k0_ci": (0.0109399, 0.0115265), "k0_mid": 0.0112332}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--preset", choices=PRESETS, help="start from a named parameter set (overridden by --config)")
    p.add_argument("--out", help="output directory (default: config, then $MFLMM_OUTPUT_DIR, then ./mflmm_output)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--backend", choices=("auto", "cython", "python"))


def _add_sim(p: argparse.ArgumentParser) -> None:
    p.add_argument("--particles", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--variant", choices=("deterministic", "taming", "decorrelate", "anticorrelate"))
    p.add_argument("--threshold", help="variance threshold policy: number, fixed:<v>, l10-displaced-squared, l10-squared or inf")
    p.add_argument("--until", type=int, help="stop once the state at this tenor index is recorded")
    p.add_argument("--scenarios", help="reuse a binary scenario file instead of simulating")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mflmm", description="Mean-field LIBOR market model toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate a scenario set and write it out")
    _add_common(p)
    _add_sim(p)
    p.add_argument("--format", help="comma-separated output formats: binary,csv")

    p = sub.add_parser("price", help="Monte Carlo and analytic caplet/swaption prices")
    _add_common(p)
    _add_sim(p)

    p = sub.add_parser("calibrate", help="fixed-point calibration to a quoted caplet volatility")
    _add_common(p)
    p.add_argument("--paths", type=int)
    p.add_argument("--max-iter", type=int)

    p = sub.add_parser("diagnose", help="excess statistics, histograms and the martingale test")
    _add_common(p)
    _add_sim(p)

    p = sub.add_parser("reproduce-table1", help="run the single-caplet calibration example end to end")
    _add_common(p)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--iterations", type=int, default=6)
    return parser


def _load_config(args) -> RunConfig:
    if args.config:
        cfg = RunConfig.load(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = RunConfig()
    e, m, v = cfg.mf_engine, cfg.market_data, cfg.volatility
    if args.seed is not None:
        e.seed = args.seed
        cfg.calibration.seed = args.seed
    if args.workers is not None:
        e.workers = args.workers
    if args.backend is not None:
        e.backend = args.backend
    if args.out:
        cfg.output.dir = args.out
    for name, target, attr in (
        ("particles", e, "particles"),
        ("until", e, "until"),
        ("horizon", m, "horizon"),
        ("variant", v, "variant"),
        ("threshold", v, "threshold"),
        ("paths", cfg.calibration, "paths"),
        ("max_iter", cfg.calibration, "max_iter"),
    ):
        val = getattr(args, name, None)
        if val is not None:
            setattr(target, attr, val)
    if getattr(args, "format", None):
        cfg.output.formats = [f.strip() for f in args.format.split(",") if f.strip()]
    cfg.validate()
    return cfg


def _curve(cfg: RunConfig):
    m = cfg.market_data
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        disc = load_curve(m.curve_path(), m.convention)
    return bootstrap_forwards(disc, TenorStructure.yearly(m.horizon), m.displacement)


def _vol_model(cfg: RunConfig, curve) -> VolatilityModel:
    v = cfg.volatility
    thr = threshold_from_policy(v.threshold, curve.forwards, curve.displacement)
    return VolatilityModel(v.hump(), reference_angles(curve.n_rates), MeanFieldSpec(v.variant, thr))


def _backend(cfg: RunConfig):
    return None if cfg.mf_engine.backend == "auto" else cfg.mf_engine.backend


def _scenarios(cfg: RunConfig, curve, args) -> ScenarioSet:
    path = getattr(args, "scenarios", None)
    if path:
        if not Path(path).is_file():
            raise UsageError(f"scenario file {path!r} not found")
        meta_path = Path(path).with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
        return read_binary(path, meta)
    e = cfg.mf_engine
    return simulate(
        curve,
        _vol_model(cfg, curve),
        e.particles,
        e.seed,
        workers=e.workers,
        chunk_size=e.chunk_size,
        backend=_backend(cfg),
        until=None if e.until < 0 else e.until,
    )


def _out_dir(cfg: RunConfig) -> Path:
    out = cfg.output.resolve_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metadata(cfg: RunConfig, command: str, argv, extra=None) -> dict:
    meta = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "backend": get_backend(_backend(cfg)).BACKEND,
        "config": cfg.to_dict(),
        "config_hash": spec_hash(cfg.to_dict()),
        "rerun": f"mflmm {command} --config run_config.toml",
    }
    meta.update(extra or {})
    return meta


def _finish(cfg: RunConfig, out: Path, command: str, argv, extra=None) -> None:
    cfg.save(out / "run_config.toml")
    write_json(_metadata(cfg, command, argv, extra), out / "metadata.json")


def cmd_simulate(args, argv) -> int:
    cfg = _load_config(args)
    curve = _curve(cfg)
    scen = _scenarios(cfg, curve, args)
    out = _out_dir(cfg)
    files = {}
    if "binary" in cfg.output.formats:
        path = write_binary(scen, out / "scenarios.bin")
        write_json(scen.metadata, out / "scenarios.json")
        files["scenarios.bin"] = file_sha256(path)
    if "csv" in cfg.output.formats:
        path = write_csv(scen, out / "scenarios.csv")
        files["scenarios.csv"] = file_sha256(path)
        files["scenarios_numeraire.csv"] = file_sha256(out / "scenarios_numeraire.csv")
    _finish(cfg, out, "simulate", argv, {"scenario": scen.metadata, "checksums": files})
    for name, digest in files.items():
        print(f"{digest}  {out / name}")
    return EXIT_OK


def _strike(cfg: RunConfig, atm: float) -> float:
    s = cfg.pricing.strike
    return atm if s == "atm" else float(s)


def cmd_price(args, argv) -> int:
    cfg = _load_config(args)
    curve = _curve(cfg)
    scen = _scenarios(cfg, curve, args)
    pr = cfg.pricing
    last = min(curve.n_rates, scen.n_dates)  # caplet i fixes at t_{i-1}
    expiries = [int(i) for i in pr.expiries] or list(range(1, last + 1))
    if max(expiries) > last:
        raise UsageError(f"expiries beyond {last} are not covered by a run stopped at t_{scen.n_dates - 1}")
    hump = cfg.volatility.hump()
    rows = []
    for i in expiries:
        K = _strike(cfg, curve.forward(i))
        q = mc_caplet(scen, i, K, pr.nominal)
        ref = model_caplet(curve, hump, i, K, pr.nominal)
        rows.append(
            {"instrument": "caplet", "expiry": i, "tenor": 1, "strike": K, "price": q.price, "std_err": q.std_err}
        )
        rows.append(
            {"instrument": "caplet_analytic", "expiry": i, "tenor": 1, "strike": K, "price": ref.price, "std_err": 0.0}
        )
    j, n = pr.swaption_expiry, pr.swaption_tenor
    if j + n > curve.n_rates or j >= scen.n_dates:
        print(f"swaption {j}x{n} skipped: not covered by the simulated dates", file=sys.stderr)
    else:
        K = _strike(cfg, forward_swap_rate(curve, j, n))
        sw = mc_swaption(scen, j, n, K)
        rows.append(
            {"instrument": "payer_swaption", "expiry": j, "tenor": n, "strike": K, "price": sw.price, "std_err": sw.std_err}
        )
    out = _out_dir(cfg)
    write_rows(rows, out / "prices.csv")
    write_json(rows, out / "prices.json")
    _finish(cfg, out, "price", argv, {"scenario": scen.metadata})
    print(f"{len(rows)} prices written to {out / 'prices.csv'}")
    return EXIT_OK


def _target(cfg: RunConfig) -> tuple[CalibrationTarget, HumpParams]:
    c = cfg.calibration
    target = CalibrationTarget(c.implied_vol, c.fixing_time, c.strike, c.l0, c.threshold, c.h)
    return target, HumpParams(c.a, c.b, c.c, c.d, "abcd")


def _calibrate(cfg: RunConfig, max_iter: int, tol: float):
    c = cfg.calibration
    target, initial = _target(cfg)
    return picard_calibrate(
        target,
        n_paths=c.paths,
        seed=c.seed,
        tol=tol,
        max_iter=max_iter,
        initial=initial,
        n_starts=c.n_starts,
        workers=cfg.mf_engine.workers,
        backend=_backend(cfg),
    )


def _write_calibration(state, out: Path) -> None:
    write_json(state.report(), out / "calibration.json")
    table = state.variance_table()
    header = "s," + ",".join(f"v{k}" for k in range(table.shape[1] - 1))
    np.savetxt(out / "variance.csv", table, delimiter=",", header=header, comments="", fmt="%.17g")


def cmd_calibrate(args, argv) -> int:
    cfg = _load_config(args)
    state = _calibrate(cfg, cfg.calibration.max_iter, cfg.calibration.tol)
    out = _out_dir(cfg)
    _write_calibration(state, out)
    _finish(cfg, out, "calibrate", argv, {"converged": state.converged})
    for r in state.history:
        print(f"k={r.k} price={r.price:.7f} se={r.std_err:.7f} objective={r.objective:.3e} delta={r.delta}")
    print(state.message)
    return EXIT_OK if state.converged else EXIT_RUNTIME


def cmd_diagnose(args, argv) -> int:
    cfg = _load_config(args)
    curve = _curve(cfg)
    scen = _scenarios(cfg, curve, args)
    d = cfg.diagnostics
    out = _out_dir(cfg)
    exc = excess_stats(scen, d.thresholds)
    write_rows(exc.rows(), out / "excess.csv")
    edges = np.arange(0.0, d.bin_max + 0.5 * d.bin_width, d.bin_width)
    hist_rows = []
    for t in d.histogram_times:
        if 0 <= int(t) < scen.n_rates:
            h = histogram(scen, int(t), edges)
            for lo, hi, cnt in zip(edges[:-1], edges[1:], h.counts):
                hist_rows.append({"step": int(t), "lower": lo, "upper": hi, "count": int(cnt)})
            hist_rows.append({"step": int(t), "lower": "-inf", "upper": edges[0], "count": h.underflow})
            hist_rows.append({"step": int(t), "lower": edges[-1], "upper": "inf", "count": h.overflow})
    write_rows(hist_rows, out / "histograms.csv", ["step", "lower", "upper", "count"])
    mart = martingale_test(scen)
    write_rows(mart.rows(), out / "martingale.csv")
    level = d.thresholds[0]
    summary = {
        "martingale_pass_fraction": mart.pass_fraction(),
        "explosion_steps": [int(n) for n in np.flatnonzero(exc.explosion(level))],
        "explosion_level": level,
    }
    write_json(summary, out / "diagnostics.json")
    _finish(cfg, out, "diagnose", argv, {"scenario": scen.metadata})
    print(json.dumps(summary))
    return EXIT_OK


def cmd_reproduce_table1(args, argv) -> int:
    cfg = preset("toy")
    if args.config:
        cfg = RunConfig.load(args.config)
    cfg.calibration.paths = args.paths
    if args.seed is not None:
        cfg.calibration.seed = args.seed
    if args.workers is not None:
        cfg.mf_engine.workers = args.workers
    if args.backend is not None:
        cfg.mf_engine.backend = args.backend
    if args.out:
        cfg.output.dir = args.out
    cfg.validate()
    state = _calibrate(cfg, args.iterations, tol=0.0)
    ref = state.target.market_price()
    print(f"{'k':>2}  {'CI low':>10} {'price':>10} {'CI high':>10}  {'rel.err':>8}  parameters (a, b, c, d)")
    for r in state.history:
        lo, hi = r.ci()
        pars = ", ".join(f"{x:.6g}" for x in r.params.as_tuple())
        print(f"{r.k:>2}  {lo:10.7f} {r.price:10.7f} {hi:10.7f}  {abs(r.price - ref) / ref:8.5f}  {{{pars}}}")
    k0 = state.history[0].price
    lo, hi = TABLE1_REFERENCE["k0_ci"]
    print(f"reference price (Black at the quoted vol): {ref:.7f}")
    print(f"k=0 price {k0:.7f} inside ({lo}, {hi}): {lo < k0 < hi}")
    out = _out_dir(cfg)
    _write_calibration(state, out)
    _finish(cfg, out, "reproduce-table1", argv, {"k0_price": k0})
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "price": cmd_price,
    "calibrate": cmd_calibrate,
    "diagnose": cmd_diagnose,
    "reproduce-table1": cmd_reproduce_table1,
}


def _report(kind: str, message: str, code: int, problems=None, out: Path | None = None) -> int:
    report = {"error": kind, "message": message, "exit_code": code}
    if problems:
        report["problems"] = [{"field": f, "message": m} for f, m in problems]
    text = json.dumps(report)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    out = None
    try:
        args = parser.parse_args(argv)
        if getattr(args, "out", None):
            out = Path(args.out)
        return COMMANDS[args.command](args, argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except UsageError as exc:
        return _report("usage", str(exc), EXIT_USER, out=out)
    except ConfigError as exc:
        return _report("config", str(exc), EXIT_USER, exc.problems, out)
    except (CurveError, ScenarioFormatError, PricingError, ValueError, FileNotFoundError, IndexError) as exc:
        return _report(type(exc).__name__, str(exc), EXIT_USER, out=out)
    except SimulationError as exc:
        return _report("simulation", str(exc), EXIT_RUNTIME, out=out)
    except Exception as exc:  # noqa: BLE001 - top-level guard
        return _report(type(exc).__name__, str(exc), EXIT_RUNTIME, out=out)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
