# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False
"""Compiled evaluation kernel.

Twin of ``_kernel_py`` with identical signatures; see that module for the
packed-array layout.  The basis build, normal-equation solve, residual and
gradient are fused into one pass so a chain iteration costs a single H
construction plus an M x M Cholesky (M is tiny).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport M_PI, cos, floor, sin, sqrt

cnp.import_array()

KERNEL_NAME = "cython"


cdef inline double complex _conj(double complex z) noexcept nogil:
    return z.real - 1j * z.imag


cdef int _build_basis(const double[::1] phi,
                      const double[:, ::1] t_phase,
                      const double[:, ::1] t_amp,
                      const cnp.intp_t[::1] amp_orders,
                      const cnp.intp_t[::1] col_offsets,
                      double complex[:, ::1] h) noexcept nogil:
    cdef Py_ssize_t n = t_phase.shape[0]
    cdef Py_ssize_t p_order = t_phase.shape[1]
    cdef Py_ssize_t n_c = amp_orders.shape[0]
    cdef Py_ssize_t i, c, p, a, lo
    cdef double ph
    cdef double complex carrier
    for i in range(n):
        for c in range(n_c):
            ph = 0.0
            for p in range(p_order):
                ph += phi[c * p_order + p] * t_phase[i, p]
            # ph is in cycles; reduce before the 2*pi multiply so the trig
            # argument stays small (identical math, cheaper range reduction)
            ph = 2.0 * M_PI * (ph - floor(ph))
            carrier = cos(ph) + 1j * sin(ph)
            lo = col_offsets[c]
            for a in range(amp_orders[c] + 1):
                h[i, lo + a] = t_amp[i, a] * carrier
    return 0


cdef int _cholesky(double complex[:, ::1] g, Py_ssize_t m) noexcept nogil:
    """In-place lower Cholesky of a Hermitian PD matrix; 0 on success."""
    cdef Py_ssize_t i, j, k
    cdef double complex acc
    cdef double diag
    for j in range(m):
        acc = g[j, j]
        for k in range(j):
            acc = acc - g[j, k] * _conj(g[j, k])
        diag = acc.real
        if diag <= 0.0 or diag != diag:
            return 1
        diag = sqrt(diag)
        g[j, j] = diag
        for i in range(j + 1, m):
            acc = g[i, j]
            for k in range(j):
                acc = acc - g[i, k] * _conj(g[j, k])
            g[i, j] = acc / diag
    return 0


cdef void _cho_solve(const double complex[:, ::1] low,
                     double complex[::1] b, Py_ssize_t m) noexcept nogil:
    """Solve L L^H x = b in place given the lower factor."""
    cdef Py_ssize_t i, k
    cdef double complex acc
    for i in range(m):
        acc = b[i]
        for k in range(i):
            acc = acc - low[i, k] * b[k]
        b[i] = acc / low[i, i]
    for i in range(m - 1, -1, -1):
        acc = b[i]
        for k in range(i + 1, m):
            acc = acc - _conj(low[k, i]) * b[k]
        b[i] = acc / low[i, i]


def build_basis(const double[::1] phi,
                const double[:, ::1] t_phase,
                const double[:, ::1] t_amp,
                const cnp.intp_t[::1] amp_orders,
                const cnp.intp_t[::1] col_offsets):
    """Assemble the complex basis matrix H of shape (N, M)."""
    cdef Py_ssize_t n = t_phase.shape[0]
    cdef Py_ssize_t m = col_offsets[col_offsets.shape[0] - 1]
    h_arr = np.empty((n, m), dtype=np.complex128)
    cdef double complex[:, ::1] h = h_arr
    _build_basis(phi, t_phase, t_amp, amp_orders, col_offsets, h)
    return h_arr


def eval_objective(const double[::1] phi,
                   const double complex[::1] y,
                   const double[:, ::1] t_phase,
                   const double[:, ::1] t_amp,
                   const cnp.intp_t[::1] amp_orders,
                   const cnp.intp_t[::1] col_offsets,
                   double gamma,
                   bint want_grad=True):
    """Projection objective J(phi) and optionally its gradient.

    Same contract as ``_kernel_py.eval_objective``.
    """
    cdef Py_ssize_t n = t_phase.shape[0]
    cdef Py_ssize_t p_order = t_phase.shape[1]
    cdef Py_ssize_t n_c = amp_orders.shape[0]
    cdef Py_ssize_t m = col_offsets[n_c]

    h_arr = np.empty((n, m), dtype=np.complex128)
    g_arr = np.empty((m, m), dtype=np.complex128)
    b_arr = np.empty(m, dtype=np.complex128)
    r_arr = np.empty(n, dtype=np.complex128)
    cdef double complex[:, ::1] h = h_arr
    cdef double complex[:, ::1] g = g_arr
    cdef double complex[::1] b = b_arr
    cdef double complex[::1] r = r_arr

    cdef Py_ssize_t i, j, k, c, p, lo, hi
    cdef double complex acc, fitted, s
    cdef double jval = 0.0
    cdef int fail = 0

    grad_arr = np.empty(n_c * p_order, dtype=np.float64) if want_grad else None
    cdef double[::1] grad
    cdef double gsum

    with nogil:
        _build_basis(phi, t_phase, t_amp, amp_orders, col_offsets, h)
        # normal matrix G = H^H H + gamma I (lower triangle is enough)
        for j in range(m):
            for k in range(j + 1):
                acc = 0.0
                for i in range(n):
                    acc = acc + _conj(h[i, j]) * h[i, k]
                g[j, k] = acc
            g[j, j] = g[j, j] + gamma
        fail = _cholesky(g, m)
        if fail == 0:
            # b = G^{-1} H^H y
            for j in range(m):
                acc = 0.0
                for i in range(n):
                    acc = acc + _conj(h[i, j]) * y[i]
                b[j] = acc
            _cho_solve(g, b, m)
            # residual and J = Re(y^H r)
            for i in range(n):
                acc = y[i]
                for j in range(m):
                    acc = acc - h[i, j] * b[j]
                r[i] = acc
                jval += y[i].real * acc.real + y[i].imag * acc.imag

    if fail:
        raise np.linalg.LinAlgError(
            "normal matrix H*H + gamma*I is not positive definite "
            "(rank-deficient basis with gamma=0?)"
        )
    if not want_grad:
        return jval, None, b_arr, r_arr

    grad = grad_arr
    with nogil:
        for c in range(n_c):
            lo = col_offsets[c]
            hi = col_offsets[c + 1]
            for p in range(p_order):
                grad[c * p_order + p] = 0.0
            for i in range(n):
                fitted = 0.0
                for j in range(lo, hi):
                    fitted = fitted + h[i, j] * b[j]
                s = _conj(r[i]) * fitted
                gsum = s.imag
                for p in range(p_order):
                    grad[c * p_order + p] += t_phase[i, p] * gsum
        for i in range(n_c * p_order):
            grad[i] *= 4.0 * M_PI

    return jval, grad_arr, b_arr, r_arr
