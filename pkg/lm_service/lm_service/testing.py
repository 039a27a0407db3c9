"""Tiny deterministic model for offline service tests.

A 2-layer BERT-style masked LM with random (seeded) weights over a ~40-token
WordPiece vocabulary: big enough to exercise every endpoint, small enough for
CPU finite-difference checks in float64.
"""

from __future__ import annotations

import torch
from tokenizers import Tokenizer, models, pre_tokenizers
from tokenizers.processors import TemplateProcessing
from transformers import BertConfig, BertForMaskedLM, PreTrainedTokenizerFast

from .backend import MaskedLmBackend

WORDS = [
    "true", "false", "yes", "no", "review", "snippet", "number", "answer",
    "berlin", "paris", "cookie", "gingerbread", "is", "a", "subclass", "of",
    "located", "in", "the", "movie", "was", "great", "bad", "implies",
    ":", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
]
VOCAB = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS


def make_tiny_tokenizer() -> PreTrainedTokenizerFast:
    vocab = {token: i for i, token in enumerate(VOCAB)}
    tk = Tokenizer(models.WordPiece(vocab=vocab, unk_token="[UNK]"))
    tk.pre_tokenizer = pre_tokenizers.BertPreTokenizer()
    tk.post_processor = TemplateProcessing(
        single="[CLS] $A [SEP]",
        pair="[CLS] $A [SEP] $B [SEP]",
        special_tokens=[("[CLS]", vocab["[CLS]"]), ("[SEP]", vocab["[SEP]"])],
    )
    return PreTrainedTokenizerFast(
        tokenizer_object=tk,
        unk_token="[UNK]",
        pad_token="[PAD]",
        cls_token="[CLS]",
        sep_token="[SEP]",
        mask_token="[MASK]",
    )


def make_tiny_backend(max_length: int = 128, dtype: torch.dtype = torch.float64) -> MaskedLmBackend:
    tokenizer = make_tiny_tokenizer()
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=37,
        max_position_embeddings=max(max_length, 16),
    )
    torch.manual_seed(0)
    model = BertForMaskedLM(config)
    if dtype == torch.float64:
        model = model.double()
    return MaskedLmBackend(tokenizer, model, max_length=max_length)
