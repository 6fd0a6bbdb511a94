# cython: language_level=3
"""Compiled kernels. Same signatures and semantics as ``_pykernels``."""

import numpy as np

from libc.math cimport exp, sqrt, INFINITY, NAN, isfinite


def posterior_moments(log_prior, log_lik, chi0, chi1, states, phi):
    cdef const double[:, ::1] lp = np.ascontiguousarray(log_prior, dtype=np.float64)
    cdef const double[:, ::1] ll = np.ascontiguousarray(log_lik, dtype=np.float64)
    cdef const double[::1] c0 = np.ascontiguousarray(chi0, dtype=np.float64)
    cdef const double[::1] c1 = np.ascontiguousarray(chi1, dtype=np.float64)
    cdef const double[::1] st = np.ascontiguousarray(states, dtype=np.float64)
    cdef const double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef Py_ssize_t n = lp.shape[0], M = lp.shape[1], i, m
    out_arr = np.empty((n, 3))
    cdef double[:, ::1] out = out_arr
    cdef double[::1] a = np.empty(M)
    cdef double top, z, w, mean, var, eph, d
    with nogil:
        for i in range(n):
            top = -INFINITY
            for m in range(M):
                a[m] = c1[i] * ll[i, m] + c0[i] * lp[i, m]
                if a[m] > top:
                    top = a[m]
            if not isfinite(top):
                out[i, 0] = NAN
                out[i, 1] = NAN
                out[i, 2] = NAN
                continue
            z = 0.0
            mean = 0.0
            eph = 0.0
            for m in range(M):
                w = exp(a[m] - top)
                a[m] = w
                z += w
            for m in range(M):
                a[m] = a[m] / z
                mean += a[m] * st[m]
                eph += a[m] * ph[m]
            var = 0.0
            for m in range(M):
                d = st[m] - mean
                var += a[m] * d * d
            out[i, 0] = mean
            out[i, 1] = var
            out[i, 2] = eph
    return out_arr


def mlr_violations(q, double tol, Py_ssize_t cap):
    cdef const double[:, ::1] Q = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t J = Q.shape[0], M = Q.shape[1]
    cdef Py_ssize_t j, j2, m, m2, kept = 0
    cdef long long total = 0
    found_arr = np.empty((max(cap, 0), 4), dtype=np.int64)
    cdef long long[:, ::1] found = found_arr
    with nogil:
        for j in range(J - 1):
            for j2 in range(j + 1, J):
                for m in range(M - 1):
                    for m2 in range(m + 1, M):
                        if Q[j2, m2] * Q[j, m] < Q[j, m2] * Q[j2, m] - tol:
                            if kept < cap:
                                found[kept, 0] = j
                                found[kept, 1] = j2
                                found[kept, 2] = m
                                found[kept, 3] = m2
                                kept += 1
                            total += 1
    return found_arr[:kept].copy(), int(total)


def qr_pivoted(a):
    qr_arr = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef double[:, ::1] A = qr_arr
    cdef Py_ssize_t n = A.shape[0], k = A.shape[1], steps = min(n, k)
    tau_arr = np.zeros(k)
    perm_arr = np.arange(k, dtype=np.int64)
    cdef double[::1] tau = tau_arr
    cdef long long[::1] perm = perm_arr
    cdef double[::1] norms = np.empty(k)
    cdef double[::1] w = np.empty(k)
    cdef Py_ssize_t i, j, c, p
    cdef long long ptmp
    cdef double best, t, alpha, beta, xnorm, scale, vi
    with nogil:
        for j in range(steps):
            for c in range(j, k):
                norms[c] = 0.0
            for i in range(j, n):
                for c in range(j, k):
                    norms[c] += A[i, c] * A[i, c]
            p = j
            best = norms[j]
            for c in range(j + 1, k):
                if norms[c] > best:
                    best = norms[c]
                    p = c
            if p != j:
                for i in range(n):
                    t = A[i, j]
                    A[i, j] = A[i, p]
                    A[i, p] = t
                ptmp = perm[j]
                perm[j] = perm[p]
                perm[p] = ptmp
            xnorm = 0.0
            for i in range(j, n):
                xnorm += A[i, j] * A[i, j]
            xnorm = sqrt(xnorm)
            if xnorm == 0.0:
                continue
            alpha = A[j, j]
            beta = -xnorm if alpha >= 0 else xnorm
            tau[j] = (beta - alpha) / beta
            scale = 1.0 / (alpha - beta)
            for i in range(j + 1, n):
                A[i, j] = A[i, j] * scale
            A[j, j] = beta
            if j + 1 < k:
                for c in range(j + 1, k):
                    w[c] = A[j, c]
                for i in range(j + 1, n):
                    vi = A[i, j]
                    for c in range(j + 1, k):
                        w[c] += vi * A[i, c]
                for c in range(j + 1, k):
                    w[c] = tau[j] * w[c]
                    A[j, c] -= w[c]
                for i in range(j + 1, n):
                    vi = A[i, j]
                    for c in range(j + 1, k):
                        A[i, c] -= vi * w[c]
    return qr_arr, tau_arr, perm_arr


def apply_qt(qr, tau, y):
    # column-major copy so each reflector tail is contiguous
    cdef const double[::1, :] A = np.asfortranarray(qr, dtype=np.float64)
    cdef const double[::1] t = np.ascontiguousarray(tau, dtype=np.float64)
    y_arr = np.array(y, dtype=np.float64, copy=True)
    squeeze = y_arr.ndim == 1
    if squeeze:
        y_arr = y_arr[:, None]
    y_arr = np.asfortranarray(y_arr)
    cdef double[::1, :] Y = y_arr
    cdef Py_ssize_t n = A.shape[0], k = A.shape[1], r = Y.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double w
    with nogil:
        for c in range(r):
            for j in range(min(n, k)):
                if t[j] == 0.0:
                    continue
                w = Y[j, c]
                for i in range(j + 1, n):
                    w += A[i, j] * Y[i, c]
                w = t[j] * w
                Y[j, c] -= w
                for i in range(j + 1, n):
                    Y[i, c] -= A[i, j] * w
    return y_arr[:, 0].copy() if squeeze else np.ascontiguousarray(y_arr)
