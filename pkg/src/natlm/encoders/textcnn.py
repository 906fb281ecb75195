"""TextCNN over instruction embeddings of one basic block.

Every kernel of height h slides over the block rows, ReLU is applied and the
maximum over positions is kept, giving one feature per kernel. Blocks shorter
than the tallest kernel are zero-padded to its height.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..bytecode_cfg import BasicBlock
from ..losses import softmax_xent
from .embedding import EmbeddingTable, instruction_token
from .nn import Adam, glorot

log = logging.getLogger(__name__)

MAX_BLOCK_LEN = 256


@dataclass
class TextCnnParams:
    weights: list[np.ndarray]  # one (R, h, d) bank per kernel height
    biases: list[np.ndarray]   # one (R,) per bank

    def __post_init__(self):
        dims = {w.shape[2] for w in self.weights}
        if len(dims) > 1:
            raise ValueError("all kernel widths must equal the embedding dim")

    @property
    def heights(self) -> list[int]:
        return [w.shape[1] for w in self.weights]

    @property
    def out_dim(self) -> int:
        return sum(w.shape[0] for w in self.weights)

    @property
    def dim(self) -> int:
        return self.weights[0].shape[2]

    @classmethod
    def init(cls, dim: int, seed: int, heights=(2, 3, 4), kernels: int = 32) -> "TextCnnParams":
        rng = np.random.default_rng(seed)
        return cls([glorot(rng, (kernels, h, dim)) for h in heights], [np.zeros(kernels) for _ in heights])

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        return out


def textcnn_block(block_embeds: np.ndarray, params: TextCnnParams) -> np.ndarray:
    """Pooled feature vector (M,) for a single (N, d) block."""
    x = np.asarray(block_embeds, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("block must have at least one instruction")
    out, _ = textcnn_forward(x[None], np.array([x.shape[0]]), params)
    return out[0]


def _pad_batch(x: np.ndarray, hmax: int) -> np.ndarray:
    if x.shape[1] >= hmax:
        return x
    pad = np.zeros((x.shape[0], hmax - x.shape[1], x.shape[2]))
    return np.concatenate([x, pad], axis=1)


def textcnn_forward(x: np.ndarray, lengths: np.ndarray, params: TextCnnParams):
    """Batched forward over zero-padded blocks ``x`` (B, L, d).

    Returns pooled features (B, M) and a cache for :func:`textcnn_backward`.
    """
    hmax = max(params.heights)
    x = _pad_batch(np.asarray(x, dtype=np.float64), hmax)
    B, L, d = x.shape
    eff = np.maximum(lengths, hmax)
    feats, cache = [], []
    for W, b in zip(params.weights, params.biases):
        R, h, _ = W.shape
        P = L - h + 1
        # window p covers rows p..p+h-1; accumulate one kernel row at a time
        z = np.broadcast_to(b, (B, P, R)).copy()
        for r in range(h):
            z += x[:, r:r + P] @ W[:, r, :].T
        invalid = np.arange(P)[None, :] > (eff - h)[:, None]
        z[invalid] = -np.inf
        arg = np.argmax(z, axis=1)  # (B, R)
        zmax = np.take_along_axis(z, arg[:, None, :], axis=1)[:, 0]
        feats.append(np.maximum(zmax, 0.0))
        cache.append((arg, zmax))
    return np.concatenate(feats, axis=1), (x, cache)


def textcnn_backward(dout: np.ndarray, cache, params: TextCnnParams):
    """Gradients for weights, biases and the (padded) input from d(features)."""
    x, banks = cache
    B = x.shape[0]
    dx = np.zeros_like(x)
    grads = {}
    col = 0
    rows = np.arange(B)[:, None]
    for i, (W, (arg, zmax)) in enumerate(zip(params.weights, banks)):
        R, h, d = W.shape
        dz = dout[:, col:col + R] * (zmax > 0)  # (B, R)
        col += R
        dW = np.empty_like(W)
        for r in range(h):
            picked = x[rows, arg + r]  # (B, R, d)
            dW[:, r, :] = np.einsum("br,brd->rd", dz, picked)
            np.add.at(dx, (rows, arg + r), dz[:, :, None] * W[None, :, r, :])
        grads[f"W{i}"] = dW
        grads[f"b{i}"] = dz.sum(axis=0)
    return grads, dx


def block_token_ids(block: BasicBlock, table: EmbeddingTable, max_len: int = MAX_BLOCK_LEN) -> np.ndarray:
    return table.indices(instruction_token(i) for i in block.instructions[:max_len])


def _batch(seqs: list[np.ndarray], table: EmbeddingTable, hmax: int):
    lengths = np.array([len(s) for s in seqs])
    L = max(int(lengths.max()), hmax)
    idx = np.zeros((len(seqs), L), dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        idx[i, : len(s)] = s
        mask[i, : len(s)] = True
    x = table.matrix[idx] * mask[:, :, None]
    return x, lengths, idx, mask


def block_features(seqs: list[np.ndarray], table: EmbeddingTable, params: TextCnnParams,
                   batch_size: int = 256) -> np.ndarray:
    """Inference: pooled features for many token-id sequences."""
    out = np.zeros((len(seqs), params.out_dim))
    order = np.argsort([len(s) for s in seqs], kind="stable")
    for start in range(0, len(seqs), batch_size):
        sel = order[start:start + batch_size]
        x, lengths, _, _ = _batch([seqs[i] for i in sel], table, max(params.heights))
        out[sel], _ = textcnn_forward(x, lengths, params)
    return out


@dataclass
class BlockClassifier:
    W: np.ndarray
    b: np.ndarray
    history: list[float] = field(default_factory=list)

    @classmethod
    def init(cls, in_dim: int, classes: int, seed: int) -> "BlockClassifier":
        rng = np.random.default_rng(seed)
        return cls(glorot(rng, (classes, in_dim)), np.zeros(classes))


def _dataset_loss(seqs, labels, table, params, head) -> tuple[float, float]:
    feats = block_features(seqs, table, params)
    logits = feats @ head.W.T + head.b
    loss, _ = softmax_xent(logits, labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return loss, acc


def train_block_classifier(blocks: list[tuple[np.ndarray, int]], table: EmbeddingTable, params: TextCnnParams,
                           classes: int, epochs: int = 5, lr: float = 3e-4, batch_size: int = 256,
                           weight_decay: float = 1e-4, seed: int = 0,
                           head: BlockClassifier | None = None) -> tuple[TextCnnParams, BlockClassifier]:
    """Train kernels, instruction embeddings and a linear softmax head with Adam.

    ``blocks`` holds (instruction token ids, class index) pairs. Parameters are
    updated in place; the full-dataset loss after each epoch is appended to
    ``head.history``.
    """
    if not blocks:
        raise ValueError("empty training set")
    rng = np.random.default_rng(seed)
    head = head or BlockClassifier.init(params.out_dim, classes, seed)
    seqs = [s for s, _ in blocks]
    labels = np.array([y for _, y in blocks], dtype=np.int64)
    opt = Adam(lr=lr, weight_decay=weight_decay)
    hmax = max(params.heights)
    tensors = {**params.tensors(), "head.W": head.W, "head.b": head.b, "embed": table.matrix}
    for epoch in range(epochs):
        order = rng.permutation(len(blocks))
        for start in range(0, len(order), batch_size):
            sel = order[start:start + batch_size]
            x, lengths, idx, mask = _batch([seqs[i] for i in sel], table, hmax)
            feats, cache = textcnn_forward(x, lengths, params)
            logits = feats @ head.W.T + head.b
            _, dlogits = softmax_xent(logits, labels[sel])
            grads = {"head.W": dlogits.T @ feats, "head.b": dlogits.sum(axis=0)}
            cnn_grads, dx = textcnn_backward(dlogits @ head.W, cache, params)
            grads.update(cnn_grads)
            dx = dx[:, : idx.shape[1]] * mask[:, :, None]
            demb = np.zeros_like(table.matrix)
            np.add.at(demb, idx[mask], dx[mask])
            grads["embed"] = demb
            opt.step(tensors, grads)
        loss, acc = _dataset_loss(seqs, labels, table, params, head)
        head.history.append(loss)
        log.info("textcnn epoch %d loss %.4f acc %.3f", epoch + 1, loss, acc)
    return params, head
