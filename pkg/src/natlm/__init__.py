"""Defect detection for ERC-721 contracts from AST, CFG and retrieval-augmented reasoning."""

__version__ = "0.1.0"
