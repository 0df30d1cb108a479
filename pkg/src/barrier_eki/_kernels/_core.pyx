# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: ensemble moments, P1 assembly, RK error norm.

Every function here has a NumPy twin in ``_fallback.py`` with the same
signature and results equal to round-off.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


def ensemble_moments(const double[:, ::1] U, const double[:, ::1] G):
    """Means, centered matrices, covariance and cross-covariance (1/J).

    Parameters
    ----------
    U : (J, d) particles, one per row.
    G : (J, K) forward-model outputs, one per row.

    Returns
    -------
    mean_u (d,), mean_g (K,), Eu (d, J), Eg (K, J), cov (d, d), cross (d, K)
    """
    cdef Py_ssize_t J = U.shape[0], d = U.shape[1], K = G.shape[1]
    cdef Py_ssize_t i, j
    cdef double invJ = 1.0 / J
    cdef double acc

    mean_u = np.empty(d)
    mean_g = np.empty(K)
    Eu = np.empty((d, J))
    Eg = np.empty((K, J))
    cov = np.empty((d, d))
    cross = np.empty((d, K))
    cdef double[::1] mu = mean_u, mg = mean_g
    cdef double[:, ::1] eu = Eu, eg = Eg

    for i in range(d):
        acc = 0.0
        for j in range(J):
            acc += U[j, i]
        mu[i] = acc * invJ
        for j in range(J):
            eu[i, j] = U[j, i] - mu[i]
    for i in range(K):
        acc = 0.0
        for j in range(J):
            acc += G[j, i]
        mg[i] = acc * invJ
        for j in range(J):
            eg[i, j] = G[j, i] - mg[i]

    # Row-major (n, J) buffers are column-major (J, n) matrices for BLAS.
    cdef double[:, ::1] c = cov, x = cross
    cdef char tr = b'T', nt = b'N'
    cdef int id_ = <int>d, iK = <int>K, iJ = <int>J
    cdef double alpha = invJ, beta = 0.0
    if d > 0 and J > 0:
        dgemm(&tr, &nt, &id_, &id_, &iJ, &alpha, &eu[0, 0], &iJ,
              &eu[0, 0], &iJ, &beta, &c[0, 0], &id_)
    if K > 0 and d > 0 and J > 0:
        dgemm(&tr, &nt, &iK, &id_, &iJ, &alpha, &eg[0, 0], &iJ,
              &eu[0, 0], &iJ, &beta, &x[0, 0], &iK)
    return mean_u, mean_g, Eu, Eg, cov, cross


def p1_assemble_dense(const double[::1] kappa, const Py_ssize_t[:, ::1] tri,
                      const double[:, :, ::1] local, const Py_ssize_t[::1] free_index,
                      Py_ssize_t n_free):
    """Dense stiffness matrix sum_T kappa_T * local_T restricted to free nodes."""
    cdef Py_ssize_t n_tri = tri.shape[0]
    cdef Py_ssize_t t, a, b, ia, ib
    cdef double k
    A = np.zeros((n_free, n_free))
    cdef double[:, ::1] M = A
    for t in range(n_tri):
        k = kappa[t]
        for a in range(3):
            ia = free_index[tri[t, a]]
            if ia < 0:
                continue
            for b in range(3):
                ib = free_index[tri[t, b]]
                if ib < 0:
                    continue
                M[ia, ib] += k * local[t, a, b]
    return A


def rms_error_norm(const double[::1] err, const double[::1] y0,
                   const double[::1] y1, double atol, double rtol):
    """RMS of err_i / (atol + rtol * max(|y0_i|, |y1_i|))."""
    cdef Py_ssize_t n = err.shape[0], i
    cdef double acc = 0.0, s, q, a0, a1
    for i in range(n):
        a0 = fabs(y0[i])
        a1 = fabs(y1[i])
        s = atol + rtol * (a0 if a0 > a1 else a1)
        q = err[i] / s
        acc += q * q
    return sqrt(acc / n) if n > 0 else 0.0
