# Compiled chain-CRF dynamic programs. Mirror of _crf_py (the reference
# semantics live there); scalar loops release the GIL.

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()

BACKEND = "compiled"


cdef void _forward_fill(const double[:, ::1] em, const double[:, ::1] trans,
                        const double[::1] begin, double[:, ::1] alpha) noexcept nogil:
    cdef Py_ssize_t n = em.shape[0], L = em.shape[1]
    cdef Py_ssize_t t, y, yp
    cdef double m, s, v
    for y in range(L):
        alpha[0, y] = begin[y] + em[0, y]
    for t in range(1, n):
        for y in range(L):
            m = alpha[t - 1, 0] + trans[0, y]
            for yp in range(1, L):
                v = alpha[t - 1, yp] + trans[yp, y]
                if v > m:
                    m = v
            s = 0.0
            for yp in range(L):
                s += exp(alpha[t - 1, yp] + trans[yp, y] - m)
            alpha[t, y] = em[t, y] + m + log(s)


cdef double _final_lse(const double[:, ::1] alpha, const double[::1] end) noexcept nogil:
    cdef Py_ssize_t L = alpha.shape[1], n = alpha.shape[0]
    cdef Py_ssize_t y
    cdef double m, s, v
    m = alpha[n - 1, 0] + end[0]
    for y in range(1, L):
        v = alpha[n - 1, y] + end[y]
        if v > m:
            m = v
    s = 0.0
    for y in range(L):
        s += exp(alpha[n - 1, y] + end[y] - m)
    return m + log(s)


def log_partition(const double[:, ::1] em, const double[:, ::1] trans,
                  const double[::1] begin, const double[::1] end):
    cdef Py_ssize_t n = em.shape[0], L = em.shape[1]
    alpha_arr = np.empty((n, L), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double out
    with nogil:
        _forward_fill(em, trans, begin, alpha)
        out = _final_lse(alpha, end)
    return out


def forward_backward(const double[:, ::1] em, const double[:, ::1] trans,
                     const double[::1] begin, const double[::1] end):
    cdef Py_ssize_t n = em.shape[0], L = em.shape[1]
    alpha_arr = np.empty((n, L), dtype=np.float64)
    gamma_arr = np.empty((n, L), dtype=np.float64)
    unary_arr = np.empty((n, L), dtype=np.float64)
    pair_arr = np.zeros((L, L), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] gamma = gamma_arr
    cdef double[:, ::1] unary = unary_arr
    cdef double[:, ::1] pair = pair_arr
    cdef double log_z, m, s, v
    cdef Py_ssize_t t, y, yp

    with nogil:
        _forward_fill(em, trans, begin, alpha)
        log_z = _final_lse(alpha, end)

        for y in range(L):
            gamma[n - 1, y] = end[y]
        for t in range(n - 2, -1, -1):
            for y in range(L):
                m = trans[y, 0] + em[t + 1, 0] + gamma[t + 1, 0]
                for yp in range(1, L):
                    v = trans[y, yp] + em[t + 1, yp] + gamma[t + 1, yp]
                    if v > m:
                        m = v
                s = 0.0
                for yp in range(L):
                    s += exp(trans[y, yp] + em[t + 1, yp] + gamma[t + 1, yp] - m)
                gamma[t, y] = m + log(s)

        for t in range(n):
            for y in range(L):
                unary[t, y] = exp(alpha[t, y] + gamma[t, y] - log_z)
        for t in range(n - 1):
            for y in range(L):
                for yp in range(L):
                    pair[y, yp] += exp(
                        alpha[t, y] + trans[y, yp] + em[t + 1, yp]
                        + gamma[t + 1, yp] - log_z
                    )
    return log_z, unary_arr, pair_arr


def viterbi(const double[:, ::1] em, const double[:, ::1] trans,
            const double[::1] begin, const double[::1] end):
    cdef Py_ssize_t n = em.shape[0], L = em.shape[1]
    beta_arr = np.empty((n, L), dtype=np.float64)
    path_arr = np.empty(n, dtype=np.int32)
    cdef double[:, ::1] beta = beta_arr
    cdef int[::1] path = path_arr
    cdef Py_ssize_t t, y, yp, best
    cdef double m, v, score

    with nogil:
        for y in range(L):
            beta[n - 1, y] = em[n - 1, y] + end[y]
        for t in range(n - 2, -1, -1):
            for y in range(L):
                m = trans[y, 0] + beta[t + 1, 0]
                for yp in range(1, L):
                    v = trans[y, yp] + beta[t + 1, yp]
                    if v > m:
                        m = v
                beta[t, y] = em[t, y] + m

        # Strict > keeps the first (smallest) index on ties, which makes the
        # emitted path the lexicographically smallest argmax sequence.
        best = 0
        m = begin[0] + beta[0, 0]
        for y in range(1, L):
            v = begin[y] + beta[0, y]
            if v > m:
                m = v
                best = y
        path[0] = <int> best
        score = m
        for t in range(n - 1):
            best = 0
            m = trans[path[t], 0] + beta[t + 1, 0]
            for yp in range(1, L):
                v = trans[path[t], yp] + beta[t + 1, yp]
                if v > m:
                    m = v
                    best = yp
            path[t + 1] = <int> best
    return path_arr, score
