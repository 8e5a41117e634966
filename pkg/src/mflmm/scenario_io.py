"""Scenario export: long-format CSV, a little-endian binary container and run metadata.

Binary layout (all little-endian)::

    8 bytes   magic b"MFLMMSC\\0"
    uint32    format version (1)
    uint32    N, number of rates
    uint32    R, number of recorded dates (N, or K+1 for a run stopped at t_K)
    uint32    S, number of numeraire rows (N+1, or K+1)
    uint64    P, number of particles
    float64   displacement
    float64   tenor dates t_0..t_N
    float64   rates: for n = 0..R-1 a (P, N-n) row-major block of L_{t_n}^m, m = n+1..N
    float64   numeraire, (S, P) row-major
    float64   variance estimates, (N, N) row-major (NaN where not defined)
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .engine import ScenarioSet

MAGIC = b"MFLMMSC\x00"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIQd")
_F8 = np.dtype("<f8")


class ScenarioFormatError(ValueError):
    pass


def write_binary(scenarios: ScenarioSet, path) -> Path:
    path = Path(path)
    N, P = scenarios.n_rates, scenarios.n_particles
    with open(path, "wb") as fh:
        R, S = scenarios.n_dates, scenarios.numeraire.shape[0]
        fh.write(_HEADER.pack(MAGIC, VERSION, N, R, S, P, float(scenarios.displacement)))
        fh.write(np.asarray(scenarios.tenor_dates, dtype=_F8).tobytes())
        for block in scenarios.rates:
            fh.write(np.ascontiguousarray(block, dtype=_F8).tobytes())
        fh.write(np.ascontiguousarray(scenarios.numeraire, dtype=_F8).tobytes())
        fh.write(np.ascontiguousarray(scenarios.psi, dtype=_F8).tobytes())
    return path


def read_binary(path, metadata: dict | None = None) -> ScenarioSet:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ScenarioFormatError("file too short for a scenario header")
        magic, version, N, R, S, P, alpha = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ScenarioFormatError(f"{path} is not a scenario file (bad magic)")
        if version != VERSION:
            raise ScenarioFormatError(f"unsupported scenario format version {version}")
        if not (R <= N and S <= N + 1 and R >= 1 and S >= 1):
            raise ScenarioFormatError("inconsistent scenario dimensions in header")

        def take(count: int) -> np.ndarray:
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise ScenarioFormatError("scenario file is truncated")
            return np.frombuffer(buf, dtype=_F8).astype(float)

        dates = take(N + 1)
        rates = [take(P * (N - n)).reshape(P, N - n) for n in range(R)]
        numeraire = take(S * P).reshape(S, P)
        psi = take(N * N).reshape(N, N)
        if fh.read(1):
            raise ScenarioFormatError("trailing bytes after scenario payload")
    return ScenarioSet(dates, float(alpha), rates, numeraire, psi, dict(metadata or {}))


def write_csv(scenarios: ScenarioSet, path, numeraire_path=None) -> Path:
    """Long format ``step, maturity, particle, rate`` (alive and fixing rates only).

    Numeraires go to ``numeraire_path`` (default ``<stem>_numeraire.csv``)
    as ``step, particle, numeraire``.
    """
    path = Path(path)
    N, P = scenarios.n_rates, scenarios.n_particles
    particles = np.arange(P)
    with open(path, "w", newline="") as fh:
        fh.write("step,maturity,particle,rate\n")
        for n in range(scenarios.n_dates):
            block = scenarios.rates[n]
            k = block.shape[1]
            table = np.column_stack(
                [np.full(P * k, n), np.tile(np.arange(n + 1, N + 1), P), np.repeat(particles, k), block.reshape(-1)]
            )
            np.savetxt(fh, table, fmt=["%d", "%d", "%d", "%.17g"], delimiter=",")
    numeraire_path = Path(numeraire_path) if numeraire_path else path.with_name(path.stem + "_numeraire.csv")
    with open(numeraire_path, "w", newline="") as fh:
        fh.write("step,particle,numeraire\n")
        S = scenarios.numeraire.shape[0]
        table = np.column_stack([np.repeat(np.arange(S), P), np.tile(particles, S), scenarios.numeraire.reshape(-1)])
        np.savetxt(fh, table, fmt=["%d", "%d", "%.17g"], delimiter=",")
    return path


def read_csv(path, numeraire_path=None, tenor_dates=None, displacement: float = 0.01) -> ScenarioSet:
    """Rebuild a scenario set from :func:`write_csv` output (variance estimates are not stored)."""
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    numeraire_path = Path(numeraire_path) if numeraire_path else path.with_name(path.stem + "_numeraire.csv")
    ndata = np.loadtxt(numeraire_path, delimiter=",", skiprows=1, ndmin=2)
    steps, mats, parts = (data[:, k].astype(int) for k in range(3))
    N, P = int(mats.max()), int(parts.max()) + 1
    R = int(steps.max()) + 1
    rates = [np.full((P, N - n), np.nan) for n in range(R)]
    for n in range(R):
        sel = steps == n
        rates[n][parts[sel], mats[sel] - n - 1] = data[sel, 3]
    numeraire = np.full((int(ndata[:, 0].max()) + 1, P), np.nan)
    numeraire[ndata[:, 0].astype(int), ndata[:, 1].astype(int)] = ndata[:, 2]
    dates = np.arange(N + 1, dtype=float) if tenor_dates is None else np.asarray(tenor_dates, dtype=float)
    return ScenarioSet(dates, displacement, rates, numeraire, np.full((N, N), np.nan), {})


def spec_hash(params: dict) -> str:
    """Stable SHA-256 of a JSON-serialisable parameter dict."""
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_rows(rows, path, fieldnames=None) -> Path:
    """Write an iterable of dicts as CSV."""
    rows = list(rows)
    path = Path(path)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return path
