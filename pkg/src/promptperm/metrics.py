"""Shared prediction-quality metrics over a split of examples."""

from __future__ import annotations

from typing import Sequence

from .core import Dataset, Example, PromptAssembler, PromptTemplate
from .errors import ContractViolation
from .scoring import Candidates, ScoringOracle, SeparatorEmbedding, predict_top1

METRICS = ("accuracy", "p_at_1")


def candidates_for(metric: str, dataset: Dataset) -> Candidates:
    """Candidate set convention: label surfaces for accuracy, vocab for P@1."""
    if metric == "accuracy":
        if dataset.label_set is None:
            raise ContractViolation("accuracy needs a label set")
        return dataset.label_set.surfaces()
    if metric == "p_at_1":
        return "vocab"
    raise ContractViolation(f"unknown metric {metric!r}")


def gold_candidate(ex: Example, dataset: Dataset, metric: str) -> str:
    if metric == "accuracy":
        assert dataset.label_set is not None
        return dataset.label_set.surface(ex.label)
    return ex.label


def split_metric(
    indices: Sequence[int],
    examples: Sequence[Example],
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    sep: SeparatorEmbedding | str | None = None,
    metric: str = "accuracy",
    assembler: PromptAssembler | None = None,
) -> float:
    """Fraction of queries whose top-1 prediction equals the gold answer."""
    if not examples:
        raise ContractViolation("cannot evaluate on an empty split")
    if assembler is None:
        assembler = PromptAssembler(dataset, tmpl)
    cand = candidates_for(metric, dataset)
    prompts = [assembler.assemble(indices, ex) for ex in examples]
    dists = oracle.score_many(prompts, cand, sep)
    hits = 0
    for ex, dist in zip(examples, dists):
        if predict_top1(dist) == gold_candidate(ex, dataset, metric):
            hits += 1
    return hits / len(examples)
