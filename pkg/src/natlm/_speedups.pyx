# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels. Mirrors natlm._pykernels one function at a time."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def decode(const unsigned char[:] code):
    """Split raw bytecode into instruction records.

    Returns four int64 arrays: offset, opcode, immediate length present in the
    code, and the number of zero bytes padded onto a truncated PUSH.
    """
    cdef Py_ssize_t n = code.shape[0]
    cdef Py_ssize_t i = 0, k = 0, width, avail
    cdef unsigned char op
    cdef cnp.int64_t[:] offsets = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[:] ops = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[:] imm = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[:] pad = np.empty(n, dtype=np.int64)
    while i < n:
        op = code[i]
        offsets[k] = i
        ops[k] = op
        if 0x60 <= op <= 0x7F:
            width = op - 0x5F
            avail = n - i - 1
            if avail >= width:
                imm[k] = width
                pad[k] = 0
            else:
                imm[k] = avail
                pad[k] = width - avail
            i += 1 + imm[k]
        else:
            imm[k] = 0
            pad[k] = 0
            i += 1
        k += 1
    return (np.asarray(offsets)[:k].copy(), np.asarray(ops)[:k].copy(),
            np.asarray(imm)[:k].copy(), np.asarray(pad)[:k].copy())


def score_rows(const double[:, ::1] matrix, const double[::1] query,
               double w_cos, double w_dist):
    """Cosine, Euclidean distance and combined score of every row against query.

    Rows with zero norm get cosine 0. The query must be nonzero.
    """
    cdef Py_ssize_t n = matrix.shape[0], d = matrix.shape[1], r, j
    cdef double qn = 0.0, dot, rn, sq, diff, c
    cdef cnp.float64_t[:] cos = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[:] dist = np.empty(n, dtype=np.float64)
    cdef cnp.float64_t[:] score = np.empty(n, dtype=np.float64)
    for j in range(d):
        qn += query[j] * query[j]
    qn = sqrt(qn)
    with nogil:
        for r in range(n):
            dot = 0.0
            rn = 0.0
            sq = 0.0
            for j in range(d):
                dot += matrix[r, j] * query[j]
                rn += matrix[r, j] * matrix[r, j]
                diff = matrix[r, j] - query[j]
                sq += diff * diff
            rn = sqrt(rn)
            if rn == 0.0:
                c = 0.0
            else:
                c = dot / (rn * qn)
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
            cos[r] = c
            dist[r] = sqrt(sq)
            score[r] = w_cos * c + w_dist * (1.0 / (1.0 + dist[r]))
    return np.asarray(cos), np.asarray(dist), np.asarray(score)
