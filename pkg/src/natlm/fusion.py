"""Gated fusion of AST and CFG vectors, and alignment with defect text embeddings."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .encoders.nn import Adam, glorot, sigmoid
from .losses import softmax_xent
from .oracle import DefectType

log = logging.getLogger(__name__)

FUSED_DIM = 128
AST_DIM = 256
CFG_DIM = 128
ALIGNED_DIM = 128


def _gate(logit: float) -> float:
    # exact endpoints for infinite logits; sigmoid(+-inf) already gives 1.0 / 0.0 in float64
    return float(sigmoid(np.float64(logit)))


def _check(name: str, x: np.ndarray, W: np.ndarray) -> None:
    if x.ndim != 1 or x.shape[0] != W.shape[1]:
        raise ValueError(f"{name} has shape {x.shape}, expected ({W.shape[1]},)")


def _mix(alpha: float, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # at the endpoints return the selected operand untouched, so alpha in {0, 1} is exact
    if alpha == 1.0:
        return a
    if alpha == 0.0:
        return b
    return alpha * a + (1.0 - alpha) * b


@dataclass
class FusionParams:
    W_ast: np.ndarray
    b_ast: np.ndarray
    W_cfg: np.ndarray
    b_cfg: np.ndarray
    alpha_logit: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        self.alpha_logit = np.atleast_1d(np.asarray(self.alpha_logit, dtype=np.float64))
        if self.W_ast.shape[0] != self.W_cfg.shape[0]:
            raise ValueError("AST and CFG projections must share an output dim")

    @property
    def alpha(self) -> float:
        return _gate(self.alpha_logit[0])

    @property
    def out_dim(self) -> int:
        return self.W_ast.shape[0]

    @classmethod
    def init(cls, seed: int, ast_dim: int = AST_DIM, cfg_dim: int = CFG_DIM, out_dim: int = FUSED_DIM) -> "FusionParams":
        rng = np.random.default_rng(seed)
        return cls(glorot(rng, (out_dim, ast_dim)), np.zeros(out_dim),
                   glorot(rng, (out_dim, cfg_dim)), np.zeros(out_dim))

    def with_alpha(self, alpha: float) -> "FusionParams":
        """Copy with the gate pinned to ``alpha`` (0 and 1 map to infinite logits)."""
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            logit = np.log(alpha) - np.log1p(-alpha)
        return FusionParams(self.W_ast, self.b_ast, self.W_cfg, self.b_cfg, np.array([logit]))

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W_ast": self.W_ast, "b_ast": self.b_ast, "W_cfg": self.W_cfg, "b_cfg": self.b_cfg,
                "alpha_logit": self.alpha_logit}


def fuse(x_ast: np.ndarray, x_cfg: np.ndarray, params: FusionParams) -> np.ndarray:
    """``alpha (W_ast x_ast + b_ast) + (1 - alpha) (W_cfg x_cfg + b_cfg)``."""
    x_ast = np.asarray(x_ast, dtype=np.float64)
    x_cfg = np.asarray(x_cfg, dtype=np.float64)
    _check("x_ast", x_ast, params.W_ast)
    _check("x_cfg", x_cfg, params.W_cfg)
    a = params.W_ast @ x_ast + params.b_ast
    c = params.W_cfg @ x_cfg + params.b_cfg
    return _mix(params.alpha, a, c)


def fuse_batch(X_ast: np.ndarray, X_cfg: np.ndarray, params: FusionParams):
    """Row-wise fusion returning the output and the cache for :func:`fuse_backward`."""
    a = X_ast @ params.W_ast.T + params.b_ast
    c = X_cfg @ params.W_cfg.T + params.b_cfg
    alpha = params.alpha
    return alpha * a + (1.0 - alpha) * c, (X_ast, X_cfg, a, c, alpha)


def fuse_backward(dout: np.ndarray, cache, params: FusionParams) -> dict[str, np.ndarray]:
    X_ast, X_cfg, a, c, alpha = cache
    da = alpha * dout
    dc = (1.0 - alpha) * dout
    dalpha = float(np.sum(dout * (a - c)))
    return {
        "W_ast": da.T @ X_ast, "b_ast": da.sum(axis=0),
        "W_cfg": dc.T @ X_cfg, "b_cfg": dc.sum(axis=0),
        "alpha_logit": np.array([dalpha * alpha * (1.0 - alpha)]),
        "x_ast": da @ params.W_ast, "x_cfg": dc @ params.W_cfg,
    }


@dataclass
class FusionHead:
    W: np.ndarray
    b: np.ndarray
    history: list[float] = field(default_factory=list)


def train_fusion(dataset: list[tuple[np.ndarray, np.ndarray, int]], params: FusionParams, classes: int,
                 epochs: int = 20, lr: float = 1e-2, batch_size: int = 32, weight_decay: float = 1e-4,
                 seed: int = 0) -> tuple[FusionParams, FusionHead]:
    """Jointly fit projections, gate and a linear softmax head by cross-entropy.

    ``params`` is updated in place. The full-set loss after each epoch is
    kept in ``head.history``.
    """
    if not dataset:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    X_ast = np.stack([d[0] for d in dataset]).astype(np.float64)
    X_cfg = np.stack([d[1] for d in dataset]).astype(np.float64)
    y = np.array([d[2] for d in dataset], dtype=np.int64)
    head = FusionHead(glorot(rng, (classes, params.out_dim)), np.zeros(classes))
    tensors = {**params.tensors(), "head.W": head.W, "head.b": head.b}
    opt = Adam(lr=lr, weight_decay=weight_decay)
    for epoch in range(epochs):
        order = rng.permutation(len(y))
        for start in range(0, len(y), batch_size):
            sel = order[start:start + batch_size]
            z, cache = fuse_batch(X_ast[sel], X_cfg[sel], params)
            _, dlogits = softmax_xent(z @ head.W.T + head.b, y[sel])
            grads = fuse_backward(dlogits @ head.W, cache, params)
            del grads["x_ast"], grads["x_cfg"]
            grads["head.W"] = dlogits.T @ z
            grads["head.b"] = dlogits.sum(axis=0)
            opt.step(tensors, grads)
        z, _ = fuse_batch(X_ast, X_cfg, params)
        loss, _ = softmax_xent(z @ head.W.T + head.b, y)
        head.history.append(loss)
        log.debug("fusion epoch %d loss %.4f alpha %.3f", epoch + 1, loss, params.alpha)
    return params, head


@dataclass
class AlignmentParams:
    W_comb: np.ndarray
    b_comb: np.ndarray
    W_emb: np.ndarray
    b_emb: np.ndarray
    alpha2_logit: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        self.alpha2_logit = np.atleast_1d(np.asarray(self.alpha2_logit, dtype=np.float64))
        if self.W_comb.shape[0] != self.W_emb.shape[0]:
            raise ValueError("both alignment projections must share an output dim")

    @property
    def alpha2(self) -> float:
        return _gate(self.alpha2_logit[0])

    @classmethod
    def init(cls, seed: int, combined_dim: int = FUSED_DIM, embedding_dim: int = 256,
             out_dim: int = ALIGNED_DIM) -> "AlignmentParams":
        rng = np.random.default_rng(seed)
        return cls(glorot(rng, (out_dim, combined_dim)), np.zeros(out_dim),
                   glorot(rng, (out_dim, embedding_dim)), np.zeros(out_dim))

    def with_alpha2(self, alpha2: float) -> "AlignmentParams":
        if not 0.0 <= alpha2 <= 1.0:
            raise ValueError("alpha2 must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            logit = np.log(alpha2) - np.log1p(-alpha2)
        return AlignmentParams(self.W_comb, self.b_comb, self.W_emb, self.b_emb, np.array([logit]))

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W_comb": self.W_comb, "b_comb": self.b_comb, "W_emb": self.W_emb, "b_emb": self.b_emb,
                "alpha2_logit": self.alpha2_logit}


def align_and_combine(x_combined: np.ndarray, d_embedding: np.ndarray, params: AlignmentParams) -> np.ndarray:
    """Project both vectors to the shared space and gate them into ``E_k``."""
    x_combined = np.asarray(x_combined, dtype=np.float64)
    d_embedding = np.asarray(d_embedding, dtype=np.float64)
    _check("x_combined", x_combined, params.W_comb)
    _check("d_embedding", d_embedding, params.W_emb)
    low_c = params.W_comb @ x_combined + params.b_comb
    low_e = params.W_emb @ d_embedding + params.b_emb
    return _mix(params.alpha2, low_c, low_e)


@dataclass(frozen=True)
class DefectEmbedding:
    defect_type: DefectType
    vector: np.ndarray
    snippet_id: str
