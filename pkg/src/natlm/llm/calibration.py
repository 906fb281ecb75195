"""Class-weighted softmax calibrator over retrieval features.

The remote model is not trainable here, so inverse-log class weighting is
applied to this small local model instead. Its per-class probabilities are
passed to the backend as priors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..losses import class_weights, softmax, softmax_xent
from ..oracle import DEFECT_TYPES

log = logging.getLogger(__name__)

CLEAN = "clean"
CLASSES: tuple[str, ...] = tuple(t.value for t in DEFECT_TYPES) + (CLEAN,)


def retrieval_features(hits: list[dict]) -> np.ndarray:
    """Best score and share of hits per defect type (8 values)."""
    best = np.zeros(len(DEFECT_TYPES))
    share = np.zeros(len(DEFECT_TYPES))
    index = {t.value: i for i, t in enumerate(DEFECT_TYPES)}
    for h in hits:
        i = index[h["defect_type"]]
        best[i] = max(best[i], h["score"])
        share[i] += 1.0
    if hits:
        share /= len(hits)
    return np.concatenate([best, share])


@dataclass
class Calibrator:
    W: np.ndarray  # (classes, features)
    b: np.ndarray
    weights: list[float]

    def priors(self, hits: list[dict]) -> dict[str, float]:
        p = softmax(self.W @ retrieval_features(hits) + self.b)
        return {c: float(p[i]) for i, c in enumerate(CLASSES) if c != CLEAN}

    def to_json(self) -> dict:
        return {"W": self.W.tolist(), "b": self.b.tolist(), "weights": list(self.weights), "classes": list(CLASSES)}

    @classmethod
    def from_json(cls, data: dict) -> "Calibrator":
        if tuple(data["classes"]) != CLASSES:
            raise ValueError("calibrator classes do not match this build")
        return cls(np.array(data["W"], dtype=np.float64), np.array(data["b"], dtype=np.float64), data["weights"])


def train_calibrator(samples: list[tuple[list[dict], str]], steps: int = 400, lr: float = 0.5) -> Calibrator:
    """Full-batch gradient descent on the class-weighted cross-entropy.

    ``samples`` pairs each contract's hits with its label (a defect type
    value or ``"clean"``). Classes absent from the data count as 1 so their
    weight stays defined.
    """
    if not samples:
        raise ValueError("no calibration samples")
    X = np.stack([retrieval_features(h) for h, _ in samples])
    y = np.array([CLASSES.index(label) for _, label in samples])
    counts = np.bincount(y, minlength=len(CLASSES))
    missing = [CLASSES[i] for i in np.flatnonzero(counts == 0)]
    if missing:
        log.info("calibrator: no samples for %s; counted as 1", ", ".join(missing))
    w = class_weights([max(1, int(n)) for n in counts])
    W = np.zeros((len(CLASSES), X.shape[1]))
    b = np.zeros(len(CLASSES))
    for _ in range(steps):
        _, dlogits = softmax_xent(X @ W.T + b, y, np.array(w))
        W -= lr * dlogits.T @ X
        b -= lr * dlogits.sum(axis=0)
    return Calibrator(W, b, w)
