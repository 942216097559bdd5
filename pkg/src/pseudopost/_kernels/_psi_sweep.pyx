# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled elliptical slice sweep over the latent Poisson log-means.

Every unit draws its randomness from a counter-based hash of
``(key, unit, counter)`` so results do not depend on the thread count.
The counter layout must stay in sync with ``_fallback.py``.
"""
from cython.parallel cimport prange, parallel
from libc.math cimport exp, log, sqrt, cos, sin, INFINITY, isfinite
from libc.stdlib cimport malloc, free
from libc.stdint cimport uint64_t

import numpy as np

cdef double TWO_PI = 6.283185307179586
cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = z + GOLDEN
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _uniform(uint64_t key, uint64_t unit, uint64_t k) noexcept nogil:
    cdef uint64_t h = _mix(_mix(key + unit * GOLDEN) + k)
    return (<double>(h >> 11) + 0.5) * 1.1102230246251565e-16


cdef inline double _loglik(const double* psi, const double* y, double w,
                           Py_ssize_t D, double cap) noexcept nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t d
    for d in range(D):
        if psi[d] > cap:
            return -INFINITY
        acc = acc + (y[d] * psi[d] - exp(psi[d]))
    return w * acc


cdef int _sweep_unit(double* psi, const double* mean, const double* y, double w,
                     const double* chol, Py_ssize_t D, uint64_t key, uint64_t unit,
                     double cap, int max_rounds, double* f, double* nu,
                     double* prop) noexcept nogil:
    cdef Py_ssize_t d, j
    cdef double acc, cur_ll, log_y, theta, lo, hi, ll, c, s
    cdef double scale = 1.0 / sqrt(w)
    cdef int r

    # prior draw nu = L^{-T} z / sqrt(w), with Lambda = L L^T
    for d in range(D):
        nu[d] = sqrt(-2.0 * log(_uniform(key, unit, 2 * d))) * \
            cos(TWO_PI * _uniform(key, unit, 2 * d + 1))
    for d in range(D - 1, -1, -1):
        acc = nu[d]
        for j in range(d + 1, D):
            acc = acc - chol[j * D + d] * nu[j]
        nu[d] = acc / chol[d * D + d]
    for d in range(D):
        nu[d] = nu[d] * scale
        f[d] = psi[d] - mean[d]

    cur_ll = _loglik(psi, y, w, D, cap)
    if not isfinite(cur_ll):
        return 1
    log_y = cur_ll + log(_uniform(key, unit, 2 * D))
    theta = TWO_PI * _uniform(key, unit, 2 * D + 1)
    lo = theta - TWO_PI
    hi = theta
    for r in range(max_rounds):
        c = cos(theta)
        s = sin(theta)
        for d in range(D):
            prop[d] = mean[d] + f[d] * c + nu[d] * s
        ll = _loglik(prop, y, w, D, cap)
        if ll > log_y:
            for d in range(D):
                psi[d] = prop[d]
            return 0
        if theta < 0.0:
            lo = theta
        else:
            hi = theta
        theta = lo + (hi - lo) * _uniform(key, unit, 2 * D + 2 + r)
    return 2


def psi_sweep(double[:, ::1] psi, const double[:, ::1] mean, const double[:, ::1] y,
              const double[::1] w, const double[:, ::1] chol, uint64_t key,
              double cap=700.0, int max_rounds=2000, int n_threads=1):
    """Update every row of ``psi`` in place; return per-unit status codes.

    Status 0 is an accepted move, 1 a non-finite current log-likelihood,
    2 an exhausted shrinkage budget (state left unchanged).
    """
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t D = psi.shape[1]
    cdef Py_ssize_t i
    cdef double* scratch
    status_arr = np.zeros(n, dtype=np.intc)
    cdef int[::1] status = status_arr
    if n == 0:
        return status_arr
    if n_threads < 1:
        n_threads = 1
    with nogil, parallel(num_threads=n_threads):
        scratch = <double*> malloc(3 * D * sizeof(double))
        for i in prange(n, schedule="static"):
            status[i] = _sweep_unit(&psi[i, 0], &mean[i, 0], &y[i, 0], w[i],
                                    &chol[0, 0], D, key, <uint64_t> i, cap,
                                    max_rounds, scratch, scratch + D,
                                    scratch + 2 * D)
        free(scratch)
    return status_arr


def uniforms(uint64_t key, const unsigned long long[::1] units,
             const unsigned long long[::1] counters):
    """Hash uniforms for (unit, counter) pairs; used to cross-check backends."""
    cdef Py_ssize_t m = units.shape[0]
    cdef Py_ssize_t k
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    for k in range(m):
        out[k] = _uniform(key, units[k], counters[k])
    return out_arr
