"""Pure-Python twins of the compiled kernels in ``_speedups.pyx``."""

from __future__ import annotations

import numpy as np


def decode(code: bytes):
    n = len(code)
    offsets, ops, imm, pad = [], [], [], []
    i = 0
    while i < n:
        op = code[i]
        offsets.append(i)
        ops.append(op)
        if 0x60 <= op <= 0x7F:
            width = op - 0x5F
            avail = n - i - 1
            got = width if avail >= width else avail
            imm.append(got)
            pad.append(width - got)
            i += 1 + got
        else:
            imm.append(0)
            pad.append(0)
            i += 1
    as_arr = lambda xs: np.asarray(xs, dtype=np.int64)  # noqa: E731
    return as_arr(offsets), as_arr(ops), as_arr(imm), as_arr(pad)


def score_rows(matrix: np.ndarray, query: np.ndarray, w_cos: float, w_dist: float):
    matrix = np.asarray(matrix, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", matrix, matrix))
    qn = np.sqrt(query @ query)
    dots = matrix @ query
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norms == 0.0, 0.0, dots / (norms * qn))
    cos = np.clip(cos, -1.0, 1.0)
    diff = matrix - query
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    score = w_cos * cos + w_dist * (1.0 / (1.0 + dist))
    return cos, dist, score
