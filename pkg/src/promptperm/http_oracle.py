"""HTTP client to a remote masked-LM scoring service.

Speaks the JSON protocol in ``protocol``.  Requests are retried with
exponential backoff on transport failures and 503 (model loading); scoring
fan-out is bounded by ``max_in_flight`` concurrent requests.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Sequence

import httpx
import numpy as np

from .core import PromptText
from .errors import ContractViolation, TransportError, UnsupportedCapability
from .protocol import segments_to_wire
from .scoring import Candidates, GradBatch, ScoreDistribution, SeparatorEmbedding

RETRYABLE_STATUSES = (503,)


class HttpScorer:
    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 60.0,
        max_in_flight: int = 8,
        retries: int = 3,
        backoff: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.max_in_flight = max_in_flight
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(
            base_url=self.endpoint, timeout=timeout, transport=transport
        )
        self._info: dict[str, Any] | None = None

    # -- plumbing ----------------------------------------------------------

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "HttpScorer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _request(
        self,
        method: str,
        path: str,
        payload: dict | None = None,
        params: dict | None = None,
        allow_missing: bool = False,
    ) -> Any:
        last_error: Exception | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                response = self._client.request(method, path, json=payload, params=params)
            except httpx.HTTPError as exc:
                last_error = TransportError(f"{method} {path}: {exc}")
                continue
            if response.status_code in (400, 422):
                detail = response.text[:500]
                raise ContractViolation(f"{method} {path} rejected ({response.status_code}): {detail}")
            if response.status_code in RETRYABLE_STATUSES or response.status_code >= 500:
                last_error = TransportError(
                    f"{method} {path} returned {response.status_code}"
                )
                continue
            if response.status_code in (404, 405) and allow_missing:
                return None
            if response.status_code != 200:
                raise TransportError(f"{method} {path} returned {response.status_code}")
            try:
                return response.json()
            except ValueError as exc:
                last_error = TransportError(f"{method} {path}: malformed JSON reply: {exc}")
                continue
        assert last_error is not None
        raise last_error

    # -- protocol ----------------------------------------------------------

    def info(self) -> dict[str, Any]:
        if self._info is None:
            raw = self._request("GET", "/info")
            for key in ("dim", "supports_grad", "vocab_size"):
                if key not in raw:
                    raise TransportError(f"/info reply missing {key!r}")
            self._info = raw
        return self._info

    @property
    def dim(self) -> int:
        return int(self.info()["dim"])

    @property
    def supports_grad(self) -> bool:
        return bool(self.info()["supports_grad"])

    @property
    def vocab_size(self) -> int:
        return int(self.info()["vocab_size"])

    @property
    def vocab(self) -> tuple[str, ...]:
        raise UnsupportedCapability(
            "the remote vocabulary is addressed with the 'vocab' marker, not materialized"
        )

    @staticmethod
    def _wire_candidates(candidates: Candidates) -> Any:
        if candidates == "vocab":
            return "vocab"
        cand = list(candidates)
        if not cand:
            raise ContractViolation("candidate set is empty")
        return cand

    def score(
        self,
        prompt: PromptText,
        candidates: Candidates,
        sep: SeparatorEmbedding | str | None = None,
    ) -> ScoreDistribution:
        if prompt.n_masks != 1:
            raise ContractViolation(f"prompt has {prompt.n_masks} masks, expected 1")
        payload: dict[str, Any] = {
            "segments": segments_to_wire(prompt),
            "candidates": self._wire_candidates(candidates),
        }
        if isinstance(sep, SeparatorEmbedding):
            payload["sep_embedding"] = list(sep.values)
        raw = self._request("POST", "/score", payload)
        try:
            return ScoreDistribution(
                tuple(str(c) for c in raw["candidates"]),
                tuple(float(p) for p in raw["probs"]),
            )
        except (KeyError, TypeError, ContractViolation) as exc:
            raise TransportError(f"/score reply malformed: {exc}") from exc

    def score_many(
        self,
        prompts: Sequence[PromptText],
        candidates: Candidates,
        sep: SeparatorEmbedding | str | None = None,
    ) -> list[ScoreDistribution]:
        if len(prompts) <= 1 or self.max_in_flight <= 1:
            return [self.score(p, candidates, sep) for p in prompts]
        workers = min(self.max_in_flight, len(prompts))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda p: self.score(p, candidates, sep), prompts))

    def loss_and_grad_sep(
        self, batch: GradBatch, sep: SeparatorEmbedding
    ) -> tuple[float, np.ndarray]:
        if not self.supports_grad:
            raise UnsupportedCapability("service does not support /grad_sep")
        payload = {
            "batch": [
                {
                    "segments": segments_to_wire(prompt),
                    "gold": gold,
                    "candidates": self._wire_candidates(candidates),
                }
                for prompt, gold, candidates in batch
            ],
            "sep_embedding": list(sep.values),
        }
        raw = self._request("POST", "/grad_sep", payload)
        try:
            grad = np.asarray([float(g) for g in raw["grad"]], dtype=np.float64)
            loss = float(raw["loss"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"/grad_sep reply malformed: {exc}") from exc
        if grad.shape != (sep.dim,):
            raise TransportError(
                f"/grad_sep returned gradient of dim {grad.shape}, expected {sep.dim}"
            )
        return loss, grad

    def init_embedding(self, token: str) -> np.ndarray | None:
        """Embedding of ``token`` from the optional /init_embedding endpoint,
        or None when the service does not provide it."""
        raw = self._request(
            "GET", "/init_embedding", params={"token": token}, allow_missing=True
        )
        if raw is None:
            return None
        try:
            return np.asarray([float(v) for v in raw["values"]], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"/init_embedding reply malformed: {exc}") from exc
