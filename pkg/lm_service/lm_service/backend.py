"""Masked-LM scoring backend.

Turns segment sequences (text / separator slot / one mask slot) into model
inputs, reads mask-position token probabilities, and computes the gradient of
the batch cross-entropy with respect to a separator embedding vector injected
at every separator slot.  Model weights are frozen; only the injected vector
carries gradient.
"""

from __future__ import annotations

from typing import Sequence

import torch

from .config import ServiceConfig


class BadRequest(Exception):
    """Maps to HTTP 400."""


class Unprocessable(Exception):
    """Maps to HTTP 422 (gold answer not scorable as a single token)."""


class MaskedLmBackend:
    def __init__(
        self,
        tokenizer,
        model,
        device: str = "cpu",
        max_length: int = 512,
        separator_token: str | None = None,
    ):
        self.tokenizer = tokenizer
        self.model = model.eval().to(device)
        self.device = device
        self.max_length = max_length
        for p in self.model.parameters():
            p.requires_grad_(False)

        self.separator_token = separator_token or tokenizer.sep_token
        if self.separator_token is None:
            raise ValueError("tokenizer has no sep token; configure separator_token")
        self._sep_ids = self._plain_ids(self.separator_token)
        if not self._sep_ids:
            raise ValueError(f"separator {self.separator_token!r} tokenizes to nothing")

        if tokenizer.mask_token_id is None:
            raise ValueError("model/tokenizer has no mask token")
        self.mask_token_id = tokenizer.mask_token_id

        # discover the single-sequence special-token wrapping generically
        wrapped = tokenizer(tokenizer.mask_token, add_special_tokens=True)["input_ids"]
        plain = self._plain_ids(tokenizer.mask_token)
        offset = wrapped.index(plain[0])
        self._prefix = wrapped[:offset]
        self._suffix = wrapped[offset + len(plain):]

    @classmethod
    def from_config(cls, config: ServiceConfig) -> "MaskedLmBackend":
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        tokenizer = AutoTokenizer.from_pretrained(config.model_name)
        model = AutoModelForMaskedLM.from_pretrained(config.model_name)
        if config.dtype == "float64":
            model = model.double()
        return cls(
            tokenizer,
            model,
            device=config.device,
            max_length=config.max_length,
            separator_token=config.separator_token,
        )

    # -- introspection -------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.model.get_input_embeddings().weight.shape[1]

    @property
    def vocab_size(self) -> int:
        return self.model.get_input_embeddings().weight.shape[0]

    @property
    def param_dtype(self) -> torch.dtype:
        return self.model.get_input_embeddings().weight.dtype

    def vocab_tokens(self) -> list[str]:
        return self.tokenizer.convert_ids_to_tokens(list(range(self.vocab_size)))

    # -- tokenization --------------------------------------------------------

    def _plain_ids(self, text: str) -> list[int]:
        return self.tokenizer(text, add_special_tokens=False)["input_ids"]

    def candidate_token_id(self, text: str, require_single: bool = False) -> int:
        """Token id for a candidate answer.

        Single-token answers are matched directly (with a leading-space
        variant for BPE vocabularies); multi-token answers fall back to their
        first token unless ``require_single`` is set, in which case they are
        rejected.
        """
        ids = self._plain_ids(text)
        if len(ids) == 1:
            return ids[0]
        if not text.startswith(" "):
            spaced = self._plain_ids(" " + text)
            if len(spaced) == 1:
                return spaced[0]
        if not ids:
            raise Unprocessable(f"answer {text!r} tokenizes to nothing")
        if require_single:
            raise Unprocessable(f"answer {text!r} is not a single token")
        return ids[0]

    def encode_segments(
        self, segments: Sequence[dict], inject_sep: bool
    ) -> tuple[list[int], list[int], int]:
        """Token ids plus separator positions and the mask position.

        With ``inject_sep`` each separator slot occupies one position (to be
        overwritten by the embedding vector); otherwise the literal separator
        token ids are spliced in.
        """
        core: list[int] = []
        sep_core_positions: list[int] = []
        mask_core_position = None
        for seg in segments:
            kind = seg.get("kind")
            if kind == "text":
                core.extend(self._plain_ids(seg.get("text", "")))
            elif kind == "sep":
                if inject_sep:
                    sep_core_positions.append(len(core))
                    core.append(self._sep_ids[0])
                else:
                    core.extend(self._sep_ids)
            elif kind == "mask":
                if mask_core_position is not None:
                    raise BadRequest("prompt must contain exactly one mask segment")
                mask_core_position = len(core)
                core.append(self.mask_token_id)
            else:
                raise BadRequest(f"unknown segment kind {kind!r}")
        if mask_core_position is None:
            raise BadRequest("prompt must contain exactly one mask segment")
        ids = self._prefix + core + self._suffix
        if len(ids) > self.max_length:
            raise BadRequest(
                f"sequence of {len(ids)} tokens exceeds max length {self.max_length}"
            )
        shift = len(self._prefix)
        return (
            ids,
            [p + shift for p in sep_core_positions],
            mask_core_position + shift,
        )

    # -- scoring -------------------------------------------------------------

    def _mask_logits(
        self,
        ids: list[int],
        sep_positions: list[int],
        mask_position: int,
        sep_vector: torch.Tensor | None,
    ) -> torch.Tensor:
        id_tensor = torch.tensor([ids], dtype=torch.long, device=self.device)
        if sep_vector is None:
            logits = self.model(input_ids=id_tensor).logits
        else:
            embeds = self.model.get_input_embeddings()(id_tensor)
            if sep_positions:
                embeds = embeds.clone()
                embeds[0, sep_positions] = sep_vector.to(embeds.dtype)
            logits = self.model(inputs_embeds=embeds).logits
        return logits[0, mask_position]

    def score(
        self,
        segments: Sequence[dict],
        candidates: Sequence[str] | str,
        sep_embedding: Sequence[float] | None = None,
    ) -> tuple[list[float], list[str]]:
        """Probabilities at the mask position, over the candidate answers'
        (first) tokens renormalized, or over the full vocabulary."""
        sep_vector = self._sep_vector(sep_embedding) if sep_embedding is not None else None
        ids, sep_positions, mask_position = self.encode_segments(
            segments, inject_sep=sep_vector is not None
        )
        with torch.no_grad():
            logits = self._mask_logits(ids, sep_positions, mask_position, sep_vector)
            probs = torch.softmax(logits.double(), dim=-1)
        if candidates == "vocab":
            return probs.tolist(), self.vocab_tokens()
        cand = list(candidates)
        if not cand:
            raise BadRequest("candidate set is empty")
        ids_for = [self.candidate_token_id(c) for c in cand]
        picked = probs[ids_for]
        total = float(picked.sum())
        if total <= 0.0:
            out = [1.0 / len(cand)] * len(cand)
        else:
            out = (picked / total).tolist()
        return out, cand

    def _sep_vector(self, values: Sequence[float], requires_grad: bool = False) -> torch.Tensor:
        if len(values) != self.dim:
            raise BadRequest(
                f"sep_embedding has dim {len(values)}, model hidden size is {self.dim}"
            )
        return torch.tensor(
            list(values), dtype=self.param_dtype, device=self.device,
            requires_grad=requires_grad,
        )

    def loss_and_grad(
        self, items: Sequence[dict], sep_embedding: Sequence[float]
    ) -> tuple[float, list[float]]:
        """Mean cross-entropy of the gold answers at the mask positions and
        its gradient with respect to the shared separator vector (summed over
        every separator occurrence in the batch)."""
        if not items:
            raise BadRequest("batch is empty")
        sep_vector = self._sep_vector(sep_embedding, requires_grad=True)
        encoded = []
        for item in items:
            gold_id = self.candidate_token_id(item["gold"], require_single=True)
            candidates = item["candidates"]
            if candidates == "vocab":
                cand_ids = None
            else:
                cand_ids = [self.candidate_token_id(c) for c in candidates]
                if gold_id not in cand_ids:
                    raise Unprocessable(
                        f"gold {item['gold']!r} not among the candidate tokens"
                    )
            ids, sep_positions, mask_position = self.encode_segments(
                item["segments"], inject_sep=True
            )
            encoded.append((ids, sep_positions, mask_position, gold_id, cand_ids))

        embedding = self.model.get_input_embeddings()
        pad_id = self.tokenizer.pad_token_id or 0
        longest = max(len(e[0]) for e in encoded)
        rows = []
        attention = torch.zeros(len(encoded), longest, dtype=torch.long, device=self.device)
        for b, (ids, sep_positions, _, _, _) in enumerate(encoded):
            padded = ids + [pad_id] * (longest - len(ids))
            row = embedding(torch.tensor(padded, dtype=torch.long, device=self.device))
            if sep_positions:
                row = row.clone()
                row[sep_positions] = sep_vector.to(row.dtype)
            rows.append(row)
            attention[b, : len(ids)] = 1
        embeds = torch.stack(rows)
        logits = self.model(inputs_embeds=embeds, attention_mask=attention).logits

        losses = []
        for b, (_, _, mask_position, gold_id, cand_ids) in enumerate(encoded):
            row = logits[b, mask_position]
            if cand_ids is None:
                log_probs = torch.log_softmax(row, dim=-1)
                losses.append(-log_probs[gold_id])
            else:
                subset = row[cand_ids]
                log_probs = torch.log_softmax(subset, dim=-1)
                losses.append(-log_probs[cand_ids.index(gold_id)])
        loss = torch.stack(losses).mean()
        if any(e[1] for e in encoded):
            loss.backward()
            grad = sep_vector.grad
            assert grad is not None
            grad = grad.detach()
        else:
            # no separator slot anywhere in the batch: loss cannot depend on
            # the vector
            grad = torch.zeros_like(sep_vector)
        return float(loss.detach()), grad.to(torch.float64).tolist()

    def embedding_row(self, token: str) -> list[float]:
        token_id = self.candidate_token_id(token, require_single=True)
        with torch.no_grad():
            row = self.model.get_input_embeddings().weight[token_id]
        return row.to(torch.float64).tolist()
