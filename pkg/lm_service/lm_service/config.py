"""Service configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass
class ServiceConfig:
    """Which masked LM to serve and how.

    RoBERTa-large is the usual choice for classification prompts,
    bert-large-cased for fact retrieval.  ``separator_token`` is the literal
    text placed at separator slots when no embedding is injected; it defaults
    to the tokenizer's sep/eos token.
    """

    model_name: str = "roberta-large"
    device: str = "cpu"
    dtype: str = "float32"  # float64 helps finite-difference checks
    max_length: int = 512
    separator_token: str | None = None
    port: int = 8321
