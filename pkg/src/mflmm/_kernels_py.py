"""Pure-numpy kernels; same contracts as the compiled ``_kernels`` module."""
from __future__ import annotations

import math

import numpy as np

_M32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_MASK64 = (1 << 64) - 1
PHILOX_M0 = 0xD2E7470EE14C6C93
PHILOX_M1 = 0xCA5A826395121157
PHILOX_W0 = 0x9E3779B97F4A7C15
PHILOX_W1 = 0xBB67AE8584CAA73B
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 2.0**-53

BACKEND = "python"


def _mulhilo(a: int, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a64 = np.uint64(a)
    lo = a64 * b
    a_lo, a_hi = a64 & _M32, a64 >> _S32
    b_lo, b_hi = b & _M32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    mid = (ll >> _S32) + (lh & _M32) + (hl & _M32)
    hi = a_hi * b_hi + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    return hi, lo


def philox4x64(counters, key0: int, key1: int) -> np.ndarray:
    """Philox4x64-10 block function for an (n, 4) array of counters."""
    c = np.array(counters, dtype=np.uint64, copy=True).reshape(-1, 4)
    c0, c1, c2, c3 = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    k0, k1 = key0 & _MASK64, key1 & _MASK64
    for rnd in range(10):
        if rnd:
            k0 = (k0 + PHILOX_W0) & _MASK64
            k1 = (k1 + PHILOX_W1) & _MASK64
        hi0, lo0 = _mulhilo(PHILOX_M0, c0)
        hi1, lo1 = _mulhilo(PHILOX_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ np.uint64(k0), lo1, hi0 ^ c3 ^ np.uint64(k1), lo0
    return np.stack([c0, c1, c2, c3], axis=1)


def _box_muller(bits: np.ndarray) -> np.ndarray:
    u = ((bits >> _S11).astype(np.float64) + 0.5) * _INV_2_53
    r01 = np.sqrt(-2.0 * np.log(u[:, 0]))
    r23 = np.sqrt(-2.0 * np.log(u[:, 2]))
    a01 = _TWO_PI * u[:, 1]
    a23 = _TWO_PI * u[:, 3]
    return np.stack([r01 * np.cos(a01), r01 * np.sin(a01), r23 * np.cos(a23), r23 * np.sin(a23)], axis=1)


def fill_normals(key0: int, key1: int, row_start: int, sub: int, block_start: int, out: np.ndarray) -> None:
    """Fill ``out[r, j]`` with standard normals from counter ``(block_start + j//4, row_start + r, sub, 0)``."""
    rows, cols = out.shape
    if rows == 0 or cols == 0:
        return
    nblocks = -(-cols // 4)
    ctr = np.zeros((rows, nblocks, 4), dtype=np.uint64)
    ctr[:, :, 0] = np.arange(block_start, block_start + nblocks, dtype=np.uint64)[None, :]
    ctr[:, :, 1] = np.arange(row_start, row_start + rows, dtype=np.uint64)[:, None]
    ctr[:, :, 2] = np.uint64(sub)
    z = _box_muller(philox4x64(ctr.reshape(-1, 4), key0, key1))
    out[:, :] = z.reshape(rows, nblocks * 4)[:, :cols]


def euler_step(x, numeraire, lam, delta, alpha: float, n: int, dt: float, z, drift_start: int = -1) -> None:
    """Advance displaced log-rates ``x`` (rows, N) from t_n to t_{n+1} in place.

    Columns ``n+1..N-1`` move; column ``n`` (the rate fixing at t_n) only
    feeds the numeraire accrual. The drift of column c sums the weighted
    loadings of columns ``drift_start..c`` (default ``n + 1``, the rates
    alive over the step; ``n`` also includes the fixing rate).
    """
    k0 = n + 1 if drift_start < 0 else drift_start
    if not n <= k0 <= n + 1:
        raise ValueError("drift_start must be n or n + 1")
    with np.errstate(over="ignore"):
        fixing = np.exp(x[:, n]) - alpha
    xs = x[:, k0:]
    lam_a = lam[k0:]
    with np.errstate(divide="ignore", over="ignore"):
        e = delta[k0:] * np.exp(xs)
        w = 1.0 / (1.0 + 1.0 / e)
    acc = np.cumsum(w[:, :, None] * lam_a[None, :, :], axis=1)
    drift = np.einsum("pkd,kd->pk", acc, lam_a)
    var = np.einsum("kd,kd->k", lam_a, lam_a)
    diff = z @ lam_a.T
    off = n + 1 - k0
    x[:, n + 1:] = xs[:, off:] + (drift[:, off:] - 0.5 * var[off:]) * dt + diff[:, off:] * math.sqrt(dt)
    with np.errstate(over="ignore"):
        numeraire *= 1.0 + delta[n] * fixing
