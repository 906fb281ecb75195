"""Token and instruction embedding tables, plus the 768 -> 256 projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ast_frontend import CLS, SEP, TokenSequence
from ..bytecode_cfg import Instruction
from ..opcodes import MNEMONICS, push_width
from .nn import glorot, uniform

UNK = "[UNK]"
TOKEN_DIM = 768
PROJECTED_DIM = 256
INSTRUCTION_DIM = 64
INIT_BOUND = 0.05


@dataclass
class EmbeddingTable:
    vocab: dict[str, int]
    matrix: np.ndarray
    # learned position rows; only the token flavor carries them
    positions: np.ndarray | None = None

    def __post_init__(self):
        if UNK not in self.vocab:
            raise ValueError("vocabulary needs an [UNK] row")
        if max(self.vocab.values()) >= self.matrix.shape[0]:
            raise ValueError("vocabulary index beyond table rows")

    @property
    def oov(self) -> int:
        return self.vocab[UNK]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def indices(self, tokens) -> np.ndarray:
        oov = self.oov
        return np.fromiter((self.vocab.get(t, oov) for t in tokens), dtype=np.int64)

    @classmethod
    def build(cls, tokens, dim: int, seed: int, max_positions: int | None = None) -> "EmbeddingTable":
        """Seeded uniform table over ``[UNK]`` plus the distinct ``tokens`` in order."""
        vocab = {UNK: 0}
        for t in tokens:
            vocab.setdefault(t, len(vocab))
        rng = np.random.default_rng(seed)
        matrix = uniform(rng, (len(vocab), dim), INIT_BOUND)
        positions = uniform(rng, (max_positions, dim), INIT_BOUND) if max_positions else None
        return cls(vocab, matrix, positions)


@dataclass
class ProjectionParams:
    W_proj: np.ndarray
    b_proj: np.ndarray

    def __post_init__(self):
        if self.W_proj.shape != (PROJECTED_DIM, TOKEN_DIM) or self.b_proj.shape != (PROJECTED_DIM,):
            raise ValueError(
                f"projection must be {PROJECTED_DIM}x{TOKEN_DIM} + {PROJECTED_DIM}, "
                f"got {self.W_proj.shape} + {self.b_proj.shape}"
            )

    @classmethod
    def init(cls, seed: int) -> "ProjectionParams":
        rng = np.random.default_rng(seed)
        return cls(glorot(rng, (PROJECTED_DIM, TOKEN_DIM)), np.zeros(PROJECTED_DIM))


def embed_and_project(tokens: TokenSequence, table: EmbeddingTable, proj: ProjectionParams) -> np.ndarray:
    """Rows ``W_proj @ (word_i + position_i) + b_proj`` for every token."""
    if table.dim != TOKEN_DIM:
        raise ValueError(f"token table must be {TOKEN_DIM}-dimensional, got {table.dim}")
    idx = table.indices(tokens.tokens)
    e = table.matrix[idx]
    if table.positions is not None:
        n = len(idx)
        if n > table.positions.shape[0]:
            raise ValueError(f"sequence of {n} tokens exceeds {table.positions.shape[0]} positions")
        e = e + table.positions[:n]
    return e @ proj.W_proj.T + proj.b_proj


def token_vocabulary(sequences) -> list[str]:
    """Distinct tokens across sequences in first-seen order, specials first."""
    seen = {CLS: None, SEP: None}
    for seq in sequences:
        for t in seq.tokens:
            seen.setdefault(t, None)
    return list(seen)


# --------------------------------------------------------------------------
# instruction flavor

_BUCKETS = ("zero", "small", "addr", "large")


def push_bucket(ins: Instruction) -> str:
    value = ins.value or 0
    if value == 0:
        return "zero"
    if value < 256:
        return "small"
    if push_width(ins.opcode) == 20:
        return "addr"
    return "large"


def instruction_token(ins: Instruction) -> str:
    if push_width(ins.opcode):
        return f"{ins.name}:{push_bucket(ins)}"
    return ins.name


def instruction_vocabulary() -> list[str]:
    out = []
    for code, name in MNEMONICS.items():
        if push_width(code):
            out.extend(f"{name}:{b}" for b in _BUCKETS)
        else:
            out.append(name)
    return out


def instruction_table(seed: int, dim: int = INSTRUCTION_DIM) -> EmbeddingTable:
    return EmbeddingTable.build(instruction_vocabulary(), dim, seed)
