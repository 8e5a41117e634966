# Compiled kernels: Philox4x64-10 normals and the fused log-Euler particle step.
# Contracts match mflmm._kernels_py. Inner loops run without the GIL.
from libc.math cimport exp, log, sqrt, cos, sin, M_PI
from libc.stdint cimport uint64_t
from libc.stdlib cimport malloc, free

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint64_t mflmm_mulhilo(uint64_t a, uint64_t b, uint64_t *hi) {
        unsigned __int128 p = (unsigned __int128)a * (unsigned __int128)b;
        *hi = (uint64_t)(p >> 64);
        return (uint64_t)p;
    }
    """
    uint64_t mflmm_mulhilo(uint64_t a, uint64_t b, uint64_t *hi) nogil

BACKEND = "cython"

DEF M0 = 0xD2E7470EE14C6C93
DEF M1 = 0xCA5A826395121157
DEF W0 = 0x9E3779B97F4A7C15
DEF W1 = 0xBB67AE8584CAA73B


cdef inline void _philox(uint64_t *c, uint64_t k0, uint64_t k1) noexcept nogil:
    cdef uint64_t hi0, hi1, lo0, lo1, t0, t2
    cdef int rnd
    for rnd in range(10):
        if rnd:
            k0 = k0 + <uint64_t>W0
            k1 = k1 + <uint64_t>W1
        lo0 = mflmm_mulhilo(<uint64_t>M0, c[0], &hi0)
        lo1 = mflmm_mulhilo(<uint64_t>M1, c[2], &hi1)
        t0 = hi1 ^ c[1] ^ k0
        t2 = hi0 ^ c[3] ^ k1
        c[0] = t0
        c[1] = lo1
        c[2] = t2
        c[3] = lo0


def philox4x64(counters, key0, key1):
    """Philox4x64-10 block function for an (n, 4) uint64 array of counters."""
    import numpy as np
    cdef uint64_t[:, ::1] src = np.ascontiguousarray(counters, dtype=np.uint64).reshape(-1, 4)
    out = np.empty((src.shape[0], 4), dtype=np.uint64)
    cdef uint64_t[:, ::1] dst = out
    cdef uint64_t k0 = key0 & 0xFFFFFFFFFFFFFFFF
    cdef uint64_t k1 = key1 & 0xFFFFFFFFFFFFFFFF
    cdef uint64_t c[4]
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(src.shape[0]):
            for j in range(4):
                c[j] = src[i, j]
            _philox(c, k0, k1)
            for j in range(4):
                dst[i, j] = c[j]
    return out


def fill_normals(key0, key1, Py_ssize_t row_start, sub, block_start, double[:, ::1] out):
    """Fill ``out[r, j]`` with standard normals from counter ``(block_start + j//4, row_start + r, sub, 0)``."""
    cdef uint64_t k0 = key0 & 0xFFFFFFFFFFFFFFFF
    cdef uint64_t k1 = key1 & 0xFFFFFFFFFFFFFFFF
    cdef uint64_t s = sub
    cdef uint64_t b0 = block_start
    cdef Py_ssize_t rows = out.shape[0], cols = out.shape[1]
    cdef Py_ssize_t nblocks = (cols + 3) // 4
    cdef Py_ssize_t r, b, j, col
    cdef uint64_t c[4]
    cdef double u[4]
    cdef double z[4]
    cdef double r01, r23
    cdef double inv = 1.0 / 9007199254740992.0
    with nogil:
        for r in range(rows):
            for b in range(nblocks):
                c[0] = b0 + <uint64_t>b
                c[1] = <uint64_t>(row_start + r)
                c[2] = s
                c[3] = 0
                _philox(c, k0, k1)
                for j in range(4):
                    u[j] = (<double>(c[j] >> 11) + 0.5) * inv
                r01 = sqrt(-2.0 * log(u[0]))
                r23 = sqrt(-2.0 * log(u[2]))
                z[0] = r01 * cos(2.0 * M_PI * u[1])
                z[1] = r01 * sin(2.0 * M_PI * u[1])
                z[2] = r23 * cos(2.0 * M_PI * u[3])
                z[3] = r23 * sin(2.0 * M_PI * u[3])
                for j in range(4):
                    col = 4 * b + j
                    if col < cols:
                        out[r, col] = z[j]


def euler_step(double[:, ::1] x, double[::1] numeraire, const double[:, ::1] lam,
               const double[::1] delta, double alpha, Py_ssize_t n, double dt,
               const double[:, ::1] z, Py_ssize_t drift_start=-1):
    """Advance displaced log-rates ``x`` (rows, N) from t_n to t_{n+1} in place.

    Drift sums run over columns ``drift_start..c`` (default ``n + 1``).
    """
    cdef Py_ssize_t rows = x.shape[0], N = x.shape[1], d = lam.shape[1]
    cdef Py_ssize_t p, c, k
    cdef double sq = sqrt(dt)
    cdef double e, w, drift, diff, xc
    cdef double *acc
    cdef double *var
    if drift_start < 0:
        drift_start = n + 1
    if drift_start < n or drift_start > n + 1:
        raise ValueError("drift_start must be n or n + 1")
    if rows == 0:
        return
    acc = <double *> malloc(d * sizeof(double))
    var = <double *> malloc(N * sizeof(double))
    if acc == NULL or var == NULL:
        free(acc)
        free(var)
        raise MemoryError()
    with nogil:
        for c in range(n, N):
            var[c] = 0.0
            for k in range(d):
                var[c] += lam[c, k] * lam[c, k]
        for p in range(rows):
            for k in range(d):
                acc[k] = 0.0
            for c in range(drift_start, N):
                xc = x[p, c]
                e = delta[c] * exp(xc)
                w = 1.0 / (1.0 + 1.0 / e)
                for k in range(d):
                    acc[k] += w * lam[c, k]
                if c > n:
                    drift = 0.0
                    diff = 0.0
                    for k in range(d):
                        drift += lam[c, k] * acc[k]
                        diff += lam[c, k] * z[p, k]
                    x[p, c] = xc + (drift - 0.5 * var[c]) * dt + diff * sq
            numeraire[p] *= 1.0 + delta[n] * (exp(x[p, n]) - alpha)
    free(acc)
    free(var)
