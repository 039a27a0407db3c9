"""JSON wire protocol to the scoring service.

POST /score    {segments: [{kind: "text"|"sep"|"mask", text?}],
                candidates: [string] | "vocab", sep_embedding?: [float]}
            -> {probs: [float], candidates: [string]}
POST /grad_sep {batch: [{segments, gold: string, candidates}],
                sep_embedding: [float]}
            -> {loss: float, grad: [float], dim: int}
GET  /info  -> {dim: int, supports_grad: bool, vocab_size: int}

Errors: HTTP 400 malformed, 422 gold-not-in-candidates, 503 model loading.
"""

from __future__ import annotations

from typing import Any, Sequence

from .core import PromptText, Segment
from .errors import TransportError

_SEGMENT_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": ["text", "sep", "mask"]},
        "text": {"type": "string"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_CANDIDATES_SCHEMA = {
    "oneOf": [
        {"type": "array", "items": {"type": "string"}, "minItems": 1},
        {"const": "vocab"},
    ]
}

SCORE_REQUEST_SCHEMA = {
    "type": "object",
    "properties": {
        "segments": {"type": "array", "items": _SEGMENT_SCHEMA, "minItems": 1},
        "candidates": _CANDIDATES_SCHEMA,
        "sep_embedding": {"type": "array", "items": {"type": "number"}},
    },
    "required": ["segments", "candidates"],
    "additionalProperties": False,
}

SCORE_RESPONSE_SCHEMA = {
    "type": "object",
    "properties": {
        "probs": {"type": "array", "items": {"type": "number"}},
        "candidates": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["probs", "candidates"],
}

GRAD_REQUEST_SCHEMA = {
    "type": "object",
    "properties": {
        "batch": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "properties": {
                    "segments": {"type": "array", "items": _SEGMENT_SCHEMA},
                    "gold": {"type": "string"},
                    "candidates": _CANDIDATES_SCHEMA,
                },
                "required": ["segments", "gold", "candidates"],
                "additionalProperties": False,
            },
        },
        "sep_embedding": {"type": "array", "items": {"type": "number"}},
    },
    "required": ["batch", "sep_embedding"],
    "additionalProperties": False,
}

GRAD_RESPONSE_SCHEMA = {
    "type": "object",
    "properties": {
        "loss": {"type": "number"},
        "grad": {"type": "array", "items": {"type": "number"}},
        "dim": {"type": "integer"},
    },
    "required": ["loss", "grad", "dim"],
}

INFO_RESPONSE_SCHEMA = {
    "type": "object",
    "properties": {
        "dim": {"type": "integer"},
        "supports_grad": {"type": "boolean"},
        "vocab_size": {"type": "integer"},
    },
    "required": ["dim", "supports_grad", "vocab_size"],
}


def segments_to_wire(prompt: PromptText) -> list[dict[str, Any]]:
    out: list[dict[str, Any]] = []
    for seg in prompt.segments:
        if seg.kind == "text":
            out.append({"kind": "text", "text": seg.text})
        else:
            out.append({"kind": seg.kind})
    return out


def segments_from_wire(raw: Sequence[dict[str, Any]]) -> PromptText:
    segs = []
    for item in raw:
        kind = item.get("kind")
        if kind == "text":
            segs.append(Segment("text", item.get("text", "")))
        elif kind in ("sep", "mask"):
            segs.append(Segment(kind))
        else:
            raise TransportError(f"unknown segment kind {kind!r} on the wire")
    return PromptText(tuple(segs))
