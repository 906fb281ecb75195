"""Cross-entropy, class weighting and weighted cross-entropy."""

from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)

EPS = 1e-12


def cross_entropy(y, y_hat) -> float:
    """``-sum(y * log(y_hat))`` over all entries; y_hat must be positive where y is."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    mask = y != 0
    return float(-np.sum(y[mask] * np.log(y_hat[mask])))


def class_weights(counts, log=math.log) -> list[float]:
    """Inverse-log frequency weights ``1 / log(1 + n)``; natural log by default."""
    out = []
    for n in counts:
        if n < 1:
            raise ValueError(f"class count must be >= 1, got {n}")
        out.append(1.0 / log(1 + n))
    return out


def weighted_loss(y, y_hat, w) -> float:
    """``-sum(w * y * log(y_hat))`` with y_hat clamped to EPS where y is set.

    Arrays broadcast, so ``w`` may be per-sample or per-class against a
    one-hot ``y`` of shape (N, C).
    """
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    w = np.broadcast_to(np.asarray(w, dtype=np.float64), y.shape)
    if y.shape != y_hat.shape:
        raise ValueError(f"label/prediction shapes differ: {y.shape} vs {y_hat.shape}")
    mask = y != 0
    probs = y_hat[mask]
    if np.any(probs <= 0):
        log.warning("weighted_loss: %d zero probabilities on true labels clamped to %g",
                    int(np.sum(probs <= 0)), EPS)
        probs = np.maximum(probs, EPS)
    return float(-np.sum(w[mask] * y[mask] * np.log(probs)))


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_xent(logits: np.ndarray, labels: np.ndarray, weights: np.ndarray | None = None):
    """Mean (optionally class-weighted) cross-entropy of logits; returns (loss, dlogits)."""
    probs = softmax(logits)
    n = logits.shape[0]
    picked = probs[np.arange(n), labels]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)[labels]
    loss = float(-np.sum(w * np.log(np.maximum(picked, EPS))) / n)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad *= (w / n)[:, None]
    return loss, grad
