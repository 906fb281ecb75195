"""Retrieval-augmented reasoning over a pluggable LLM backend."""

from ..losses import class_weights, weighted_loss
from .backends import BackendConfig, BackendError, HttpBackend, MockBackend, make_backend
from .prompt import PromptBundle, assemble_prompt
from .reasoner import DefectPrediction, Report, analyze, filter_predictions, render_text

__all__ = [
    "class_weights", "weighted_loss",
    "BackendConfig", "BackendError", "HttpBackend", "MockBackend", "make_backend",
    "PromptBundle", "assemble_prompt",
    "DefectPrediction", "Report", "analyze", "filter_predictions", "render_text",
]
