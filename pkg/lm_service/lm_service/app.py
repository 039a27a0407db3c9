"""FastAPI application exposing the scoring wire protocol.

POST /score, POST /grad_sep, GET /info, plus GET /init_embedding for seeding
a learned separator from a real token embedding.  Errors: 400 malformed
request, 422 gold answer not scorable as a single candidate token, 503 while
the model is still loading.
"""

from __future__ import annotations

import argparse
from contextlib import asynccontextmanager
from typing import Literal, Union

from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .backend import BadRequest, MaskedLmBackend, Unprocessable
from .config import ServiceConfig


class SegmentModel(BaseModel):
    kind: Literal["text", "sep", "mask"]
    text: str = ""


Candidates = Union[list[str], Literal["vocab"]]


class ScoreRequest(BaseModel):
    segments: list[SegmentModel]
    candidates: Candidates
    sep_embedding: list[float] | None = None


class GradItem(BaseModel):
    segments: list[SegmentModel]
    gold: str
    candidates: Candidates


class GradRequest(BaseModel):
    batch: list[GradItem]
    sep_embedding: list[float]


def _wire_segments(segments: list[SegmentModel]) -> list[dict]:
    return [{"kind": s.kind, "text": s.text} for s in segments]


def create_app(
    backend: MaskedLmBackend | None = None, config: ServiceConfig | None = None
) -> FastAPI:
    """Build the app around a ready backend, or load one from ``config`` at
    startup (requests served before that finish with 503)."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if app.state.backend is None and config is not None:
            app.state.backend = MaskedLmBackend.from_config(config)
        yield

    app = FastAPI(title="masked-lm scoring service", lifespan=lifespan)
    app.state.backend = backend

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @app.exception_handler(BadRequest)
    async def bad_request(request: Request, exc: BadRequest):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(Unprocessable)
    async def unprocessable(request: Request, exc: Unprocessable):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    def ready() -> MaskedLmBackend:
        if app.state.backend is None:
            raise HTTPException(status_code=503, detail="model loading")
        return app.state.backend

    @app.get("/info")
    def info():
        b = ready()
        return {"dim": b.dim, "supports_grad": True, "vocab_size": b.vocab_size}

    @app.post("/score")
    def score(request: ScoreRequest):
        b = ready()
        if isinstance(request.candidates, list) and not request.candidates:
            raise BadRequest("candidate set is empty")
        probs, candidates = b.score(
            _wire_segments(request.segments), request.candidates, request.sep_embedding
        )
        return {"probs": probs, "candidates": candidates}

    @app.post("/grad_sep")
    def grad_sep(request: GradRequest):
        b = ready()
        if not request.batch:
            raise BadRequest("batch is empty")
        items = [
            {
                "segments": _wire_segments(item.segments),
                "gold": item.gold,
                "candidates": item.candidates,
            }
            for item in request.batch
        ]
        loss, grad = b.loss_and_grad(items, request.sep_embedding)
        return {"loss": loss, "grad": grad, "dim": b.dim}

    @app.get("/init_embedding")
    def init_embedding(token: str):
        b = ready()
        return {"dim": b.dim, "values": b.embedding_row(token)}

    return app


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description="masked-LM scoring service")
    parser.add_argument("--model", default="roberta-large")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    parser.add_argument("--max-length", type=int, default=512)
    parser.add_argument("--separator", default=None,
                        help="literal separator token (default: tokenizer sep/eos)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8321)
    args = parser.parse_args(argv)

    import uvicorn

    config = ServiceConfig(
        model_name=args.model,
        device=args.device,
        dtype=args.dtype,
        max_length=args.max_length,
        separator_token=args.separator,
        port=args.port,
    )
    uvicorn.run(create_app(config=config), host=args.host, port=config.port)


if __name__ == "__main__":
    main()
