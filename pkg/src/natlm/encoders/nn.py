"""Small numpy building blocks shared by the encoders."""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.2


def uniform(rng: np.random.Generator, shape, bound: float) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


def glorot(rng: np.random.Generator, shape) -> np.ndarray:
    fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    return uniform(rng, shape, float(np.sqrt(6.0 / (fan_in + fan_out))))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def leaky_relu_grad(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x > 0, 1.0, slope)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def segment_softmax(scores: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    """Softmax of ``scores`` (E, ...) independently within each segment id."""
    shape = (n_segments,) + scores.shape[1:]
    top = np.full(shape, -np.inf)
    np.maximum.at(top, segments, scores)
    e = np.exp(scores - top[segments])
    total = np.zeros(shape)
    np.add.at(total, segments, e)
    return e / total[segments]


def segment_softmax_backward(beta: np.ndarray, dbeta: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    shape = (n_segments,) + beta.shape[1:]
    inner = np.zeros(shape)
    np.add.at(inner, segments, beta * dbeta)
    return beta * (dbeta - inner[segments])


def dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    if rate <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


class Adam:
    """Adam with L2 regularization folded into the gradient."""

    def __init__(self, lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 1e-4):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, g in grads.items():
            p = params[name]
            if self.weight_decay:
                g = g + self.weight_decay * p
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            m_hat = m / (1 - self.b1 ** self.t)
            v_hat = v / (1 - self.b2 ** self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
