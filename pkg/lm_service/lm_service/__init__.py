"""Masked-LM scoring microservice: mask-position probabilities and
separator-embedding gradients behind a small JSON protocol."""

from .app import create_app
from .backend import MaskedLmBackend
from .config import ServiceConfig

__version__ = "0.1.0"
