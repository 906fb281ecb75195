"""Edge-aware graph network over CFG blocks with attention pooling.

Per layer, every edge k (u -> v) carries a message built from the source
state and an embedding of the edge kind::

    m_k = W_m [h_u || e_k] + b_m

Messages into v are scaled by neighbour attention (LeakyReLU scores,
softmax over v's incoming edges, averaged across heads) and summed::

    h_v' = ReLU(W_v sum_k beta_k m_k + U_v h_v + b_v)

A graph vector is the attention-weighted sum of final node states, with the
weights scored against a learned global query.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..bytecode_cfg import Cfg, EdgeKind
from ..losses import softmax_xent
from .nn import Adam, dropout_mask, glorot, leaky_relu, leaky_relu_grad, segment_softmax, segment_softmax_backward

log = logging.getLogger(__name__)

EDGE_KINDS: tuple[EdgeKind, ...] = tuple(EdgeKind)
_EDGE_INDEX = {k: i for i, k in enumerate(EDGE_KINDS)}


@dataclass
class GcnLayer:
    W_m: np.ndarray  # (hidden, d_in + d_edge)
    b_m: np.ndarray
    W_v: np.ndarray  # (hidden, hidden)
    U_v: np.ndarray  # (hidden, d_in)
    b_v: np.ndarray
    P: np.ndarray    # (heads, d_att, d_in)
    q: np.ndarray    # (heads, 2 * d_att)

    @property
    def d_in(self) -> int:
        return self.U_v.shape[1]

    @property
    def heads(self) -> int:
        return self.P.shape[0]


@dataclass
class GcnParams:
    layers: list[GcnLayer]
    edge_embed: np.ndarray  # (len(EDGE_KINDS), d_edge)
    pool_P: np.ndarray      # (d_att, hidden)
    pool_q: np.ndarray      # (2 * d_att,)
    pool_g: np.ndarray      # (hidden,) learned global query node
    # "attention" scales each message by its weight; "sum" is the plain neighbour sum
    aggregation: str = "attention"

    def __post_init__(self):
        d_edge = self.edge_embed.shape[1]
        for i, layer in enumerate(self.layers):
            if layer.W_m.shape[1] != layer.d_in + d_edge:
                raise ValueError(f"layer {i}: message input must be node_dim + edge_dim")
            if i and layer.d_in != self.layers[i - 1].W_v.shape[0]:
                raise ValueError(f"layer {i}: input dim does not match previous hidden dim")
        if self.aggregation not in ("attention", "sum"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].d_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W_v.shape[0]

    @classmethod
    def init(cls, in_dim: int, seed: int, hidden: int = 128, layers: int = 2, heads: int = 2,
             edge_dim: int = 16, att_dim: int | None = None, aggregation: str = "attention") -> "GcnParams":
        rng = np.random.default_rng(seed)
        att_dim = att_dim or hidden // heads
        out = []
        d = in_dim
        for _ in range(layers):
            out.append(GcnLayer(
                W_m=glorot(rng, (hidden, d + edge_dim)), b_m=np.zeros(hidden),
                W_v=glorot(rng, (hidden, hidden)), U_v=glorot(rng, (hidden, d)), b_v=np.zeros(hidden),
                P=glorot(rng, (heads, att_dim, d)), q=glorot(rng, (heads, 2 * att_dim)),
            ))
            d = hidden
        return cls(out, rng.uniform(-0.05, 0.05, (len(EDGE_KINDS), edge_dim)),
                   glorot(rng, (att_dim, hidden)), glorot(rng, (2 * att_dim, 1))[:, 0],
                   rng.uniform(-0.05, 0.05, hidden), aggregation)

    def tensors(self) -> dict[str, np.ndarray]:
        out = {"edge_embed": self.edge_embed, "pool_P": self.pool_P, "pool_q": self.pool_q, "pool_g": self.pool_g}
        for i, layer in enumerate(self.layers):
            for name in ("W_m", "b_m", "W_v", "U_v", "b_v", "P", "q"):
                out[f"layer{i}.{name}"] = getattr(layer, name)
        return out


@dataclass
class GraphInput:
    features: np.ndarray  # (n, d_in) rows in block-id order
    src: np.ndarray
    dst: np.ndarray
    kind: np.ndarray

    @property
    def n(self) -> int:
        return self.features.shape[0]


def graph_input(cfg: Cfg, block_features) -> GraphInput:
    """Gather node features (a mapping or an (n, d) array) and edge arrays."""
    rows = []
    for b in cfg.blocks:
        try:
            rows.append(np.asarray(block_features[b.id], dtype=np.float64))
        except (KeyError, IndexError):
            raise KeyError(f"no feature for block {b.id}") from None
    feats = np.stack(rows) if rows else np.zeros((0, 0))
    src = np.array([e.source for e in cfg.edges], dtype=np.int64)
    dst = np.array([e.target for e in cfg.edges], dtype=np.int64)
    kind = np.array([_EDGE_INDEX[e.kind] for e in cfg.edges], dtype=np.int64)
    return GraphInput(feats, src, dst, kind)


@dataclass
class _LayerCache:
    H: np.ndarray
    X: np.ndarray
    M: np.ndarray
    A: np.ndarray       # (heads, n, d_att)
    s: np.ndarray       # (E, heads) pre-activation scores
    beta_h: np.ndarray  # (E, heads)
    beta: np.ndarray    # (E,)
    agg: np.ndarray
    Z: np.ndarray
    mask: np.ndarray | None


@dataclass
class GcnTrace:
    layers: list[_LayerCache] = field(default_factory=list)
    node_attention: list[np.ndarray] = field(default_factory=list)  # per layer (E, heads)
    pool_attention: np.ndarray | None = None
    pool: tuple | None = None
    H_final: np.ndarray | None = None


def neighbor_attention(layer: GcnLayer, H: np.ndarray, src: np.ndarray, dst: np.ndarray):
    """Per-head weights of each edge among the target node's incoming edges."""
    A = np.einsum("had,nd->hna", layer.P, H)
    d_att = layer.P.shape[1]
    q_dst, q_src = layer.q[:, :d_att], layer.q[:, d_att:]
    s = (np.einsum("hea,ha->eh", A[:, dst], q_dst) + np.einsum("hea,ha->eh", A[:, src], q_src))
    beta_h = segment_softmax(leaky_relu(s), dst, H.shape[0])
    return A, s, beta_h


def _layer_forward(layer: GcnLayer, H, g: GraphInput, edge_embed, aggregation, training, rng, dropout):
    n = H.shape[0]
    X = np.concatenate([H[g.src], edge_embed[g.kind]], axis=1)
    M = X @ layer.W_m.T + layer.b_m
    A, s, beta_h = neighbor_attention(layer, H, g.src, g.dst)
    beta = beta_h.mean(axis=1) if aggregation == "attention" else np.ones(len(g.src))
    agg = np.zeros((n, M.shape[1]))
    np.add.at(agg, g.dst, beta[:, None] * M)
    Z = agg @ layer.W_v.T + H @ layer.U_v.T + layer.b_v
    out = np.maximum(Z, 0.0)
    mask = None
    if training and dropout > 0:
        mask = dropout_mask(rng, out.shape, dropout)
        out = out * mask
    return out, _LayerCache(H, X, M, A, s, beta_h, beta, agg, Z, mask)


def attention_pool(params: GcnParams, H: np.ndarray):
    """Graph-wide softmax weights of every node against the global query."""
    A = H @ params.pool_P.T
    ga = params.pool_P @ params.pool_g
    d_att = params.pool_P.shape[0]
    s = ga @ params.pool_q[:d_att] + A @ params.pool_q[d_att:]
    t = leaky_relu(s)
    e = np.exp(t - t.max())
    beta = e / e.sum()
    return beta, (A, ga, s)


def gcn_forward(cfg_or_graph, block_features=None, params: GcnParams | None = None,
                training: bool = False, rng: np.random.Generator | None = None,
                dropout: float = 0.5, trace: GcnTrace | None = None) -> np.ndarray:
    """Global CFG vector ``X_CFG``.

    Accepts a :class:`Cfg` plus per-block features, or a prepared
    :class:`GraphInput`. An empty graph maps to the zero vector.
    """
    g = cfg_or_graph if isinstance(cfg_or_graph, GraphInput) else graph_input(cfg_or_graph, block_features)
    if g.n == 0:
        return np.zeros(params.out_dim)
    if g.features.shape[1] != params.in_dim:
        raise ValueError(f"block features are {g.features.shape[1]}-dim, GCN expects {params.in_dim}")
    if training and rng is None:
        rng = np.random.default_rng()
    H = g.features
    for layer in params.layers:
        H, cache = _layer_forward(layer, H, g, params.edge_embed, params.aggregation, training, rng, dropout)
        if trace is not None:
            trace.layers.append(cache)
            trace.node_attention.append(cache.beta_h)
    beta, pool_cache = attention_pool(params, H)
    if trace is not None:
        trace.pool_attention = beta
        trace.pool = pool_cache
        trace.H_final = H
    return beta @ H


def gcn_backward(dout: np.ndarray, g: GraphInput, params: GcnParams, trace: GcnTrace):
    """Parameter and input-feature gradients of ``dout . X_CFG``."""
    grads: dict[str, np.ndarray] = {}
    H = trace.H_final
    beta = trace.pool_attention
    A, ga, s = trace.pool
    d_att = params.pool_P.shape[0]
    q1, q2 = params.pool_q[:d_att], params.pool_q[d_att:]
    dH = np.outer(beta, dout)
    dbeta = H @ dout
    dt = beta * (dbeta - beta @ dbeta)
    ds = dt * leaky_relu_grad(s)
    grads["pool_q"] = np.concatenate([ds.sum() * ga, ds @ A])
    dA = np.outer(ds, q2)
    dga = ds.sum() * q1
    grads["pool_P"] = dA.T @ H + np.outer(dga, params.pool_g)
    grads["pool_g"] = params.pool_P.T @ dga
    dH += dA @ params.pool_P

    d_edge = np.zeros_like(params.edge_embed)
    for i in range(len(params.layers) - 1, -1, -1):
        layer, c = params.layers[i], trace.layers[i]
        n, d_in = c.H.shape
        if c.mask is not None:
            dH = dH * c.mask
        dZ = dH * (c.Z > 0)
        grads[f"layer{i}.W_v"] = dZ.T @ c.agg
        grads[f"layer{i}.U_v"] = dZ.T @ c.H
        grads[f"layer{i}.b_v"] = dZ.sum(axis=0)
        dagg = dZ @ layer.W_v
        dH_in = dZ @ layer.U_v
        dM = c.beta[:, None] * dagg[g.dst]
        grads[f"layer{i}.W_m"] = dM.T @ c.X
        grads[f"layer{i}.b_m"] = dM.sum(axis=0)
        dX = dM @ layer.W_m
        np.add.at(dH_in, g.src, dX[:, :d_in])
        np.add.at(d_edge, g.kind, dX[:, d_in:])

        dP = np.zeros_like(layer.P)
        dq = np.zeros_like(layer.q)
        if params.aggregation == "attention":
            dbeta_e = np.einsum("ed,ed->e", dagg[g.dst], c.M)
            dbeta_h = np.repeat(dbeta_e[:, None] / layer.heads, layer.heads, axis=1)
            dt_h = segment_softmax_backward(c.beta_h, dbeta_h, g.dst, n)
            ds_h = dt_h * leaky_relu_grad(c.s)  # (E, heads)
            d_att_l = layer.P.shape[1]
            for h in range(layer.heads):
                q_dst, q_src = layer.q[h, :d_att_l], layer.q[h, d_att_l:]
                dq[h, :d_att_l] = ds_h[:, h] @ c.A[h][g.dst]
                dq[h, d_att_l:] = ds_h[:, h] @ c.A[h][g.src]
                dA_h = np.zeros((n, d_att_l))
                np.add.at(dA_h, g.dst, np.outer(ds_h[:, h], q_dst))
                np.add.at(dA_h, g.src, np.outer(ds_h[:, h], q_src))
                dP[h] = dA_h.T @ c.H
                dH_in += dA_h @ layer.P[h]
        grads[f"layer{i}.P"] = dP
        grads[f"layer{i}.q"] = dq
        dH = dH_in
    grads["edge_embed"] = d_edge
    return grads, dH


@dataclass
class GraphClassifier:
    W: np.ndarray
    b: np.ndarray
    history: list[float] = field(default_factory=list)


def train_gcn(graphs: list[tuple[GraphInput, int]], params: GcnParams, classes: int, epochs: int = 5,
              lr: float = 1e-3, batch_size: int = 64, dropout: float = 0.5, weight_decay: float = 1e-4,
              seed: int = 0) -> tuple[GcnParams, GraphClassifier]:
    """Graph classification training of the GCN through a linear softmax head."""
    if not graphs:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    head = GraphClassifier(glorot(rng, (classes, params.out_dim)), np.zeros(classes))
    opt = Adam(lr=lr, weight_decay=weight_decay)
    tensors = {**params.tensors(), "head.W": head.W, "head.b": head.b}
    labels = np.array([y for _, y in graphs])
    for epoch in range(epochs):
        order = rng.permutation(len(graphs))
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            acc: dict[str, np.ndarray] = {}
            for i in sel:
                g, y = graphs[i]
                trace = GcnTrace()
                x = gcn_forward(g, params=params, training=True, rng=rng, dropout=dropout, trace=trace)
                logits = x @ head.W.T + head.b
                _, dlogits = softmax_xent(logits[None], np.array([y]))
                dlogits = dlogits[0] / len(sel)
                step = {"head.W": np.outer(dlogits, x), "head.b": dlogits}
                if g.n:
                    step.update(gcn_backward(dlogits @ head.W, g, params, trace)[0])
                for k, v in step.items():
                    acc[k] = acc[k] + v if k in acc else v
            opt.step(tensors, acc)
        xs = np.stack([gcn_forward(g, params=params) for g, _ in graphs])
        loss, _ = softmax_xent(xs @ head.W.T + head.b, labels)
        head.history.append(loss)
        log.info("gcn epoch %d loss %.4f", epoch + 1, loss)
    return params, head
