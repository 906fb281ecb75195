"""Trainable AST, basic-block and CFG encoders."""

from .embedding import EmbeddingTable, ProjectionParams, embed_and_project
from .gcn import GcnParams, gcn_forward, train_gcn
from .textcnn import TextCnnParams, textcnn_block, train_block_classifier
from .transformer import TransformerEncoderConfig, TransformerParams, encode_ast

__all__ = [
    "EmbeddingTable", "ProjectionParams", "embed_and_project",
    "GcnParams", "gcn_forward", "train_gcn",
    "TextCnnParams", "textcnn_block", "train_block_classifier",
    "TransformerEncoderConfig", "TransformerParams", "encode_ast",
]
