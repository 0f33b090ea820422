# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Monte Carlo rate kernels."""

import numpy as np
from libc.math cimport log2


def fixed_rate_sums(const double[:, ::1] x, const double[::1] a, const double[::1] c,
                    const double[::1] w):
    """Per-trial weighted totals and per-user sums of ``log2(1 + x a / (x c + 1))``."""
    cdef Py_ssize_t n_trials = x.shape[0], n_users = x.shape[1], t, u
    cdef double s, xv, r
    if a.shape[0] != n_users or c.shape[0] != n_users or w.shape[0] != n_users:
        raise ValueError("coefficient length does not match the number of users")
    totals = np.empty(n_trials)
    user_sums = np.zeros(n_users)
    cdef double[::1] tot = totals
    cdef double[::1] us = user_sums
    with nogil:
        for t in range(n_trials):
            s = 0.0
            for u in range(n_users):
                xv = x[t, u]
                r = log2(1.0 + xv * a[u] / (xv * c[u] + 1.0))
                us[u] += r
                s += w[u] * r
            tot[t] = s
    return totals, user_sums


def rician_power(const double[:, ::1] z, const double[::1] means, const double[::1] stds):
    """``|g|^2`` from standard normals laid out as ``[re_0..re_N, im_0..im_N]`` per row."""
    cdef Py_ssize_t n_trials = z.shape[0], n_users = means.shape[0], t, u
    cdef double re, im
    if z.shape[1] != 2 * n_users:
        raise ValueError("need two normals per user")
    out = np.empty((n_trials, n_users))
    cdef double[:, ::1] o = out
    with nogil:
        for t in range(n_trials):
            for u in range(n_users):
                re = means[u] + stds[u] * z[t, u]
                im = means[u] + stds[u] * z[t, n_users + u]
                o[t, u] = re * re + im * im
    return out
