"""Independent loop-based reference implementations used as test oracles.

These deliberately avoid the vectorized code paths of the package: plain
Python loops over floats, one formula at a time.
"""

from __future__ import annotations

import math

import numpy as np


def matvec(W, x):
    return [sum(W[i][j] * x[j] for j in range(len(x))) for i in range(len(W))]


def conv_block(x, weights, biases):
    """Max-over-time ReLU convolution, one kernel at a time."""
    n, d = len(x), len(x[0])
    out = []
    for W, b in zip(weights, biases):
        R, h, _ = W.shape
        rows = list(x) + [[0.0] * d for _ in range(max(0, max(w.shape[1] for w in weights) - n))]
        limit = max(n, max(w.shape[1] for w in weights))
        for r in range(R):
            best = -math.inf
            for p in range(limit - h + 1):
                z = b[r]
                for i in range(h):
                    for j in range(d):
                        z += W[r, i, j] * rows[p + i][j]
                best = max(best, z)
            out.append(max(best, 0.0))
    return out


def leaky(v, slope=0.2):
    return v if v > 0 else slope * v


def softmax_list(scores):
    m = max(scores)
    e = [math.exp(s - m) for s in scores]
    t = sum(e)
    return [v / t for v in e]


def gcn_reference(H, src, dst, kind, params):
    """Edge-message GCN with per-head neighbour attention and attention pooling."""
    H = [list(map(float, row)) for row in H]
    n = len(H)
    for layer in params.layers:
        heads, d_att, _ = layer.P.shape
        A = [[matvec(layer.P[h], H[v]) for v in range(n)] for h in range(heads)]
        beta = [0.0] * len(src)
        for h in range(heads):
            q1, q2 = layer.q[h][:d_att], layer.q[h][d_att:]
            for v in range(n):
                incoming = [k for k in range(len(src)) if dst[k] == v]
                if not incoming:
                    continue
                scores = [leaky(sum(q1[a] * A[h][v][a] for a in range(d_att))
                                + sum(q2[a] * A[h][src[k]][a] for a in range(d_att))) for k in incoming]
                for k, w in zip(incoming, softmax_list(scores)):
                    beta[k] += w / heads
        if params.aggregation == "sum":
            beta = [1.0] * len(src)
        hidden = layer.W_v.shape[0]
        new = []
        for v in range(n):
            agg = [0.0] * hidden
            for k in range(len(src)):
                if dst[k] != v:
                    continue
                x = H[src[k]] + list(params.edge_embed[kind[k]])
                m = [a + b for a, b in zip(matvec(layer.W_m, x), layer.b_m)]
                agg = [a + beta[k] * b for a, b in zip(agg, m)]
            z = [a + b + c for a, b, c in zip(matvec(layer.W_v, agg), matvec(layer.U_v, H[v]), layer.b_v)]
            new.append([max(t, 0.0) for t in z])
        H = new
    d_att = params.pool_P.shape[0]
    ga = matvec(params.pool_P, params.pool_g)
    scores = [leaky(sum(params.pool_q[a] * ga[a] for a in range(d_att))
                    + sum(params.pool_q[d_att + a] * matvec(params.pool_P, H[v])[a] for a in range(d_att)))
              for v in range(n)]
    beta = softmax_list(scores)
    return [sum(beta[v] * H[v][j] for v in range(n)) for j in range(len(H[0]))]


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, dot / (na * nb)))


def euclidean(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def brute_force_ranking(matrix, query, k, w_cos=0.7, w_dist=0.3):
    scored = []
    for i, row in enumerate(matrix):
        s = w_cos * cosine(row, query) + w_dist * (1.0 / (1.0 + euclidean(row, query)))
        scored.append((-s, i))
    scored.sort()
    return [i for _, i in scored[:k]]


def numeric_grad(f, arr, eps=1e-4):
    """Central differences of scalar ``f()`` with respect to every entry of ``arr`` (in place)."""
    g = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        old = arr[idx]
        arr[idx] = old + eps
        hi = f()
        arr[idx] = old - eps
        lo = f()
        arr[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def rel_error(analytic, numeric) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def layer_norm_list(row, gamma, beta, eps=1e-5):
    mu = sum(row) / len(row)
    var = sum((v - mu) ** 2 for v in row) / len(row)
    return [(v - mu) / math.sqrt(var + eps) * g + b for v, g, b in zip(row, gamma, beta)]


def transformer_reference(X, params, heads):
    """Pre-norm encoder layers then the mean of the final token states."""
    H = [list(map(float, row)) for row in X]
    n, d = len(H), len(H[0])
    dh = d // heads
    for L in params.layers:
        N1 = [layer_norm_list(r, L["ln1_g"], L["ln1_b"]) for r in H]
        q = [[a + b for a, b in zip(matvec(L["Wq"], r), L["bq"])] for r in N1]
        k = [[a + b for a, b in zip(matvec(L["Wk"], r), L["bk"])] for r in N1]
        v = [[a + b for a, b in zip(matvec(L["Wv"], r), L["bv"])] for r in N1]
        ctx = [[0.0] * d for _ in range(n)]
        for h in range(heads):
            sl = range(h * dh, (h + 1) * dh)
            for i in range(n):
                scores = [sum(q[i][a] * k[j][a] for a in sl) / math.sqrt(dh) for j in range(n)]
                w = softmax_list(scores)
                for a in sl:
                    ctx[i][a] = sum(w[j] * v[j][a] for j in range(n))
        H = [[h_ + o + b for h_, o, b in zip(H[i], matvec(L["Wo"], ctx[i]), L["bo"])] for i in range(n)]
        N2 = [layer_norm_list(r, L["ln2_g"], L["ln2_b"]) for r in H]
        out = []
        for i in range(n):
            mid = [max(0.0, a + b) for a, b in zip(matvec(L["W1"], N2[i]), L["b1"])]
            out.append([h_ + a + b for h_, a, b in zip(H[i], matvec(L["W2"], mid), L["b2"])])
        H = out
    return [sum(H[i][j] for i in range(n)) / n for j in range(d)]
