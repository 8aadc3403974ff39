# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled pairwise convexity kernels.

Rows are processed in blocks: one BLAS ``dgemm`` forms ``beta_blk X'``
and a single fused pass adds the offsets and reduces each row, so no
n x n temporary is built and the block is read once.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

cdef Py_ssize_t _BLOCK_ENTRIES = 1 << 18


cdef inline Py_ssize_t _block_rows(Py_ssize_t n):
    cdef Py_ssize_t b = _BLOCK_ENTRIES // (n if n > 0 else 1)
    if b < 1:
        b = 1
    if b > n:
        b = n
    return b


cdef void _gemm_block(const double[:, ::1] Xv, const double[:, ::1] B, Py_ssize_t s, Py_ssize_t rows,
                      double* out) noexcept nogil:
    # C-order out (rows x n) = B[s:s+rows] @ X.T, written as the Fortran product X B_blk'
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef int m = <int>Xv.shape[0]
    cdef int nn = <int>rows
    cdef int k = <int>Xv.shape[1]
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &m, &nn, &k, &one, <double*>&Xv[0, 0], &k, <double*>&B[s, 0], &k, &zero, out, &m)


cdef inline double _pos(double v) noexcept nogil:
    return v if v > 0.0 else 0.0


def _offsets(Xv, B, th):
    return np.ascontiguousarray(th - np.einsum("ij,ij->i", B, Xv))


def separation_argmax(X, theta, beta):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Py_ssize_t d = Xv.shape[1]
    j_arr = np.zeros(n, dtype=np.int64)
    v_arr = np.zeros(n, dtype=np.float64)
    if n == 0:
        return j_arr, v_arr
    cdef cnp.int64_t[::1] jo = j_arr
    cdef double[::1] vo = v_arr
    cdef const double[::1] off = _offsets(np.asarray(Xv), np.asarray(B), np.asarray(th))
    cdef Py_ssize_t bs = _block_rows(n)
    buf_arr = np.empty(bs * n, dtype=np.float64)
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t s, r, rows, i, k, jbest
    cdef double o, val, best
    cdef double* row
    with nogil:
        s = 0
        while s < n:
            rows = bs if s + bs <= n else n - s
            if d > 0:
                _gemm_block(Xv, B, s, rows, &buf[0])
            else:
                for k in range(rows * n):
                    buf[k] = 0.0
            for r in range(rows):
                i = s + r
                o = off[i]
                row = &buf[r * n]
                best = row[0] + o - th[0]
                jbest = 0
                for k in range(1, n):
                    val = row[k] + o - th[k]
                    if val > best:
                        best = val
                        jbest = k
                jo[i] = jbest
                vo[i] = best
            s += rows
    return j_arr, v_arr


def violation_sumsq(X, theta, beta):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0]
    cdef Py_ssize_t d = Xv.shape[1]
    if n == 0:
        return 0.0
    cdef const double[::1] off = _offsets(np.asarray(Xv), np.asarray(B), np.asarray(th))
    cdef Py_ssize_t bs = _block_rows(n)
    buf_arr = np.empty(bs * n, dtype=np.float64)
    cdef double[::1] buf = buf_arr
    cdef Py_ssize_t s, r, rows, k
    cdef double o, v, total = 0.0
    cdef double* row
    with nogil:
        s = 0
        while s < n:
            rows = bs if s + bs <= n else n - s
            if d > 0:
                _gemm_block(Xv, B, s, rows, &buf[0])
            else:
                for k in range(rows * n):
                    buf[k] = 0.0
            for r in range(rows):
                o = off[s + r]
                row = &buf[r * n]
                for k in range(n):
                    v = _pos(row[k] + o - th[k])
                    total += v * v
            s += rows
    return total
