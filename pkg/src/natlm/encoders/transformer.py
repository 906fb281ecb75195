"""Pre-norm transformer encoder with mean pooling over token states."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..losses import softmax
from .nn import dropout_mask, glorot, layer_norm, relu


@dataclass(frozen=True)
class TransformerEncoderConfig:
    layers: int = 2
    heads: int = 4
    model_dim: int = 256
    ffn_dim: int = 512
    dropout: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError("model_dim must be divisible by heads")


_LAYER_KEYS = ("Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo",
               "ln1_g", "ln1_b", "W1", "b1", "W2", "b2", "ln2_g", "ln2_b")


@dataclass
class TransformerParams:
    config: TransformerEncoderConfig
    layers: list[dict[str, np.ndarray]] = field(default_factory=list)

    @classmethod
    def init(cls, config: TransformerEncoderConfig, seed: int) -> "TransformerParams":
        rng = np.random.default_rng(seed)
        d, f = config.model_dim, config.ffn_dim
        layers = []
        for _ in range(config.layers):
            layer = {}
            for name in ("q", "k", "v", "o"):
                layer[f"W{name}"] = glorot(rng, (d, d))
                layer[f"b{name}"] = np.zeros(d)
            layer["W1"], layer["b1"] = glorot(rng, (f, d)), np.zeros(f)
            layer["W2"], layer["b2"] = glorot(rng, (d, f)), np.zeros(d)
            for ln in ("ln1", "ln2"):
                layer[f"{ln}_g"], layer[f"{ln}_b"] = np.ones(d), np.zeros(d)
            layers.append(layer)
        return cls(config, layers)

    @classmethod
    def zeros(cls, config: TransformerEncoderConfig) -> "TransformerParams":
        p = cls.init(config, 0)
        for layer in p.layers:
            for k in _LAYER_KEYS:
                if not k.endswith("_g"):
                    layer[k] = np.zeros_like(layer[k])
        return p

    def tensors(self) -> dict[str, np.ndarray]:
        return {f"layer{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.items()}


def ffn(x: np.ndarray, W1, b1, W2, b2) -> np.ndarray:
    """Position-wise ``ReLU(x W1 + b1) W2 + b2`` in row-vector form."""
    return relu(x @ W1.T + b1) @ W2.T + b2


def self_attention(x: np.ndarray, layer: dict, heads: int):
    n, d = x.shape
    dh = d // heads
    q = (x @ layer["Wq"].T + layer["bq"]).reshape(n, heads, dh).transpose(1, 0, 2)
    k = (x @ layer["Wk"].T + layer["bk"]).reshape(n, heads, dh).transpose(1, 0, 2)
    v = (x @ layer["Wv"].T + layer["bv"]).reshape(n, heads, dh).transpose(1, 0, 2)
    weights = softmax(q @ k.transpose(0, 2, 1) / np.sqrt(dh), axis=-1)
    ctx = (weights @ v).transpose(1, 0, 2).reshape(n, d)
    return ctx @ layer["Wo"].T + layer["bo"], weights


def encoder_states(embedded: np.ndarray, config: TransformerEncoderConfig, params: TransformerParams,
                   training: bool = False, rng: np.random.Generator | None = None):
    """Final hidden state per token plus each layer's attention maps (heads, n, n).

    Dropout (after each FFN) only runs with ``training=True``.
    """
    h = np.asarray(embedded, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("empty token sequence")
    if training and rng is None:
        rng = np.random.default_rng()
    maps = []
    for layer in params.layers:
        attn_out, weights = self_attention(layer_norm(h, layer["ln1_g"], layer["ln1_b"]), layer, config.heads)
        maps.append(weights)
        h = h + attn_out
        out = ffn(layer_norm(h, layer["ln2_g"], layer["ln2_b"]), layer["W1"], layer["b1"], layer["W2"], layer["b2"])
        if training:
            out = out * dropout_mask(rng, out.shape, config.dropout)
        h = h + out
    return h, maps


def encode_ast(embedded: np.ndarray, config: TransformerEncoderConfig, params: TransformerParams,
               training: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
    """Mean of the final token states: the contract-level ``x_ast`` vector."""
    states, _ = encoder_states(embedded, config, params, training, rng)
    return states.mean(axis=0)
