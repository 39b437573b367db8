# cython: language_level=3
"""Compiled dual-filter hot loops.

Mirror of ``_pykernels`` with the per-step bookkeeping in C and the
matrix products handed straight to BLAS.  Arrays are row-major; a row-major
``d x d`` buffer is read by Fortran BLAS as its transpose, so ``G = A F`` is
issued as ``G^T = F^T A^T``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from scipy.linalg.cython_blas cimport dgemm, dgemv

cnp.import_array()

cdef double SINGULAR_TOL = 1e-12
cdef double PROJECT_FLOOR = 1e-300


cdef inline void _matmul(const double[:, ::1] A, double[:, ::1] F, double[:, ::1] G) noexcept nogil:
    # G = A @ F (row-major)
    cdef int n = A.shape[0]
    cdef char *nn = b"N"
    cdef double one = 1.0, zero = 0.0
    dgemm(nn, nn, &n, &n, &n, &one, &F[0, 0], &n, <double *>&A[0, 0], &n, &zero, &G[0, 0], &n)


cdef inline void _vecmat(const double[::1] r, const double[:, ::1] A, double[::1] out) noexcept nogil:
    # out = r @ A
    cdef int n = A.shape[0]
    cdef int inc = 1
    cdef char *nn = b"N"
    cdef double one = 1.0, zero = 0.0
    dgemv(nn, &n, &n, &one, <double *>&A[0, 0], &n, <double *>&r[0], &inc, &zero, &out[0], &inc)


cdef inline void _matvec(const double[:, ::1] A, double[::1] y, double[::1] out) noexcept nogil:
    # out = A @ y
    cdef int n = A.shape[0]
    cdef int inc = 1
    cdef char *tt = b"T"
    cdef double one = 1.0, zero = 0.0
    dgemv(tt, &n, &n, &one, <double *>&A[0, 0], &n, &y[0], &inc, &zero, &out[0], &inc)


cdef void _gain(const double[::1] rho, const double[::1] c, double[::1] k) noexcept nogil:
    cdef Py_ssize_t i, d = rho.shape[0]
    cdef double rc = 0.0, den
    for i in range(d):
        rc += rho[i] * c[i]
    den = 1.0 - rc * rc
    if fabs(den) <= SINGULAR_TOL:
        for i in range(d):
            k[i] = 0.0
        return
    for i in range(d):
        k[i] = -rho[i] * (c[i] - rc) / den


cdef void _control_update(double[:, ::1] G, const double[::1] k, const double[::1] c,
                          double[::1] u, double[:, ::1] F) noexcept nogil:
    # u = k @ G, then F = G + outer(c, u)
    cdef Py_ssize_t i, j, d = G.shape[0]
    cdef double ki, ci
    for j in range(d):
        u[j] = 0.0
    for i in range(d):
        ki = k[i]
        if ki != 0.0:
            for j in range(d):
                u[j] += ki * G[i, j]
    for i in range(d):
        ci = c[i]
        for j in range(d):
            F[i, j] = G[i, j] + ci * u[j]


def gain(rho, c):
    cdef double[::1] r = np.ascontiguousarray(rho, dtype=np.float64)
    cdef double[::1] cc = np.ascontiguousarray(c, dtype=np.float64)
    out = np.empty(r.shape[0])
    _gain(r, cc, out)
    return out


def project(sigma):
    """Clip to the nonnegative orthant and normalize.  Returns ``(measure, fell_back)``."""
    cdef double[::1] s = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef Py_ssize_t i, d = s.shape[0]
    out = np.empty(d)
    cdef double[::1] o = out
    cdef double tot = 0.0, v
    for i in range(d):
        v = s[i] if s[i] > 0.0 else 0.0
        o[i] = v
        tot += v
    if not tot > PROJECT_FLOOR:
        for i in range(d):
            o[i] = 1.0 / d
        return out, True
    for i in range(d):
        o[i] = o[i] / tot
    return out, False


def backward_pass(A, cs, rhos, store_ys=False):
    cdef const double[:, ::1] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] csm = np.ascontiguousarray(cs, dtype=np.float64)
    cdef const double[:, ::1] rm = np.ascontiguousarray(rhos, dtype=np.float64)
    cdef Py_ssize_t T = csm.shape[0], d = csm.shape[1], t
    controls = np.empty((T, d))
    gains = np.empty((T, d))
    cdef double[:, ::1] um = controls
    cdef double[:, ::1] km = gains
    F_arr = np.eye(d)
    cdef double[:, ::1] F = F_arr
    cdef double[:, ::1] G = np.empty((d, d))
    ys = None
    if store_ys:
        ys = np.empty((T + 1, d, d))
        ys[T] = F_arr
    for t in range(T, 0, -1):
        with nogil:
            _matmul(Am, F, G)
            _gain(rm[t - 1], csm[t - 1], km[t - 1])
            _control_update(G, km[t - 1], csm[t - 1], um[t - 1], F)
        if store_ys:
            ys[t - 1] = F_arr
    return controls, gains, F_arr, ys


def apply_pass(A, cs, rhos, f):
    cdef const double[:, ::1] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] csm = np.ascontiguousarray(cs, dtype=np.float64)
    cdef const double[:, ::1] rm = np.ascontiguousarray(rhos, dtype=np.float64)
    cdef Py_ssize_t T = csm.shape[0], d = csm.shape[1], t, i
    y_arr = np.array(f, dtype=np.float64)
    cdef double[::1] y = y_arr
    cdef double[::1] g = np.empty(d)
    cdef double[::1] k = np.empty(d)
    controls = np.empty(T)
    cdef double[::1] um = controls
    cdef double u
    with nogil:
        for t in range(T, 0, -1):
            _matvec(Am, y, g)
            _gain(rm[t - 1], csm[t - 1], k)
            u = 0.0
            for i in range(d):
                u += k[i] * g[i]
            for i in range(d):
                y[i] = g[i] + csm[t - 1, i] * u
            um[t - 1] = u
    return controls, y_arr


def adjoint_recovery(A, cs, gains, r0):
    cdef const double[:, ::1] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[:, ::1] csm = np.ascontiguousarray(cs, dtype=np.float64)
    cdef const double[:, ::1] km = np.ascontiguousarray(gains, dtype=np.float64)
    cdef Py_ssize_t T = csm.shape[0], d = csm.shape[1], t, i
    out = np.empty((T + 1, d))
    cdef double[:, ::1] o = out
    cdef double[::1] w = np.empty(d)
    cdef double rc
    out[0] = r0
    with nogil:
        for t in range(1, T + 1):
            rc = 0.0
            for i in range(d):
                rc += o[t - 1, i] * csm[t - 1, i]
            for i in range(d):
                w[i] = o[t - 1, i] + (rc - 1.0) * km[t - 1, i]
            _vecmat(w, Am, o[t])
    return out


def single_shot(A, mu, cs, keep_passes=False):
    cdef const double[:, ::1] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef const double[::1] mum = np.ascontiguousarray(mu, dtype=np.float64)
    cdef const double[:, ::1] csm = np.ascontiguousarray(cs, dtype=np.float64)
    cdef Py_ssize_t T = csm.shape[0], d = csm.shape[1], t, tau, i, j
    rho_arr = np.empty((T + 1, d))
    cdef double[:, ::1] rho = rho_arr
    rho_arr[0] = mu
    cdef double[:, ::1] gains = np.empty((T, d))
    cdef double[:, ::1] F = np.empty((d, d))
    cdef double[:, ::1] G = np.empty((d, d))
    cdef double[::1] s = np.empty(d)
    cdef double[::1] sig = np.empty(d)
    cdef double[:, ::1] us
    cdef double tot, v
    passes = [] if keep_passes else None
    fallbacks = 0
    us_arr = np.zeros((T, d))
    for t in range(1, T + 1):
        us_arr = np.empty((t, d))
        us = us_arr
        with nogil:
            _gain(rho[t - 1], csm[t - 1], gains[t - 1])
            for i in range(d):
                s[i] = 0.0
            # first step of the pass: A @ I = A
            G[:, :] = Am
            for tau in range(t, 0, -1):
                if tau < t:
                    _matmul(Am, F, G)
                _control_update(G, gains[tau - 1], csm[tau - 1], us[tau - 1], F)
                for j in range(d):
                    s[j] -= us[tau - 1, j]
            # sigma = mu @ F + s, then project
            _vecmat(mum, F, sig)
            tot = 0.0
            for i in range(d):
                v = sig[i] + s[i]
                v = v if v > 0.0 else 0.0
                rho[t, i] = v
                tot += v
            if tot > PROJECT_FLOOR:
                for i in range(d):
                    rho[t, i] = rho[t, i] / tot
            else:
                for i in range(d):
                    rho[t, i] = 1.0 / d
        if not tot > PROJECT_FLOOR:
            fallbacks += 1
        if keep_passes:
            passes.append(us_arr)
    return rho_arr, us_arr, passes, fallbacks
