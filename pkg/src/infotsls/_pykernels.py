"""Pure numpy implementations of the numerical kernels.

Signatures mirror ``_ckernels.pyx`` exactly; ``infotsls._backend`` picks one
at import time.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 4096


def posterior_moments(log_prior, log_lik, chi0, chi1, states, phi):
    """Batch tempered-Bayes posteriors, reduced to moments.

    Row ``i`` of the posterior is proportional to
    ``exp(chi1[i] * log_lik[i] + chi0[i] * log_prior[i])``.

    Returns
    -------
    out : ndarray, shape (n, 3)
        Columns are the posterior mean of ``states``, the posterior variance
        of ``states`` (two-pass), and the posterior mean of ``phi``. Rows
        whose weights are all zero are NaN.
    """
    log_prior = np.asarray(log_prior, dtype=np.float64)
    log_lik = np.asarray(log_lik, dtype=np.float64)
    chi0 = np.asarray(chi0, dtype=np.float64)
    chi1 = np.asarray(chi1, dtype=np.float64)
    states = np.asarray(states, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    n = log_prior.shape[0]
    out = np.empty((n, 3))
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        a = chi1[lo:hi, None] * log_lik[lo:hi] + chi0[lo:hi, None] * log_prior[lo:hi]
        top = a.max(axis=1)
        dead = ~np.isfinite(top)
        top[dead] = 0.0
        w = np.exp(a - top[:, None])
        z = w.sum(axis=1)
        z[dead] = 1.0
        p = w / z[:, None]
        mean = p @ states
        out[lo:hi, 0] = mean
        out[lo:hi, 1] = (p * (states[None, :] - mean[:, None]) ** 2).sum(axis=1)
        out[lo:hi, 2] = p @ phi
        out[lo:hi][dead] = np.nan
    return out


def mlr_violations(q, tol, cap):
    """Scan every (s < s', w < w') pair for a cross-product MLR violation.

    Returns ``(found, total)`` where ``found`` is an int64 array of at most
    ``cap`` rows ``(j, j', m, m')`` and ``total`` counts all violations.
    """
    q = np.asarray(q, dtype=np.float64)
    J, M = q.shape
    found = []
    total = 0
    iu, ju = np.triu_indices(M, k=1)
    for j in range(J - 1):
        rest = q[j + 1:]
        # lhs[j', m, m'] = q(s'|w') q(s|w);  rhs = q(s|w') q(s'|w)
        lhs = rest[:, ju] * q[j, iu][None, :]
        rhs = q[j, ju][None, :] * rest[:, iu]
        bad = np.nonzero(lhs < rhs - tol)
        k = bad[0].size
        if k == 0:
            continue
        total += k
        if len(found) < cap:
            take = min(cap - len(found), k)
            for r, c in zip(bad[0][:take], bad[1][:take]):
                found.append((j, j + 1 + int(r), int(iu[c]), int(ju[c])))
    arr = np.array(found, dtype=np.int64).reshape(-1, 4)
    return arr, total


def qr_pivoted(a):
    """Householder QR with greedy column pivoting.

    Returns ``(qr, tau, perm)`` in LAPACK ``geqp3`` layout: R in the upper
    triangle of ``qr``, reflector tails below the diagonal with implicit unit
    leading entries, so that ``A[:, perm] = Q R``.
    """
    qr = np.array(a, dtype=np.float64, order="C", copy=True)
    n, k = qr.shape
    steps = min(n, k)
    tau = np.zeros(k)
    perm = np.arange(k, dtype=np.int64)
    for j in range(steps):
        norms = np.einsum("ij,ij->j", qr[j:, j:], qr[j:, j:])
        p = j + int(np.argmax(norms))
        if p != j:
            qr[:, [j, p]] = qr[:, [p, j]]
            perm[[j, p]] = perm[[p, j]]
        x = qr[j:, j]
        xnorm = np.sqrt(x @ x)
        if xnorm == 0.0:
            continue
        alpha = x[0]
        beta = -xnorm if alpha >= 0 else xnorm
        tau[j] = (beta - alpha) / beta
        v = x / (alpha - beta)
        v[0] = 1.0
        qr[j, j] = beta
        qr[j + 1:, j] = v[1:]
        if j + 1 < k:
            block = qr[j:, j + 1:]
            w = v @ block
            block -= tau[j] * np.outer(v, w)
    return qr, tau, perm


def apply_qt(qr, tau, y):
    """Return ``Q' y`` for the factorization from :func:`qr_pivoted`; ``y`` may be 1-D or 2-D."""
    qr = np.asarray(qr, dtype=np.float64)
    y = np.array(y, dtype=np.float64, copy=True)
    n, k = qr.shape
    for j in range(min(n, k)):
        if tau[j] == 0.0:
            continue
        v = qr[j:, j].copy()
        v[0] = 1.0
        w = v @ y[j:]
        y[j:] -= tau[j] * np.multiply.outer(v, w)
    return y
