"""Greedy one-shot prompt growth and label-pattern repetition.

One-shot mode works from a pool holding exactly one training example per
label.  A prompt sequence (repetition allowed) is grown greedily: at each
step every single-example insertion is tried and the candidate with the best
worst-case loss on the pool examples is kept.  No validation set is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import Dataset, Example, PromptAssembler, PromptTemplate
from .errors import ContractViolation
from .metrics import candidates_for, gold_candidate
from .scoring import ScoringOracle, SeparatorEmbedding, cross_entropy

BALANCE_MODES = ("balanced", "alternating", "none")


@dataclass(frozen=True)
class GrowableSequence:
    """Ordered example indices with repetition allowed, capped at l_max."""

    indices: tuple[int, ...]
    l_max: int

    def __post_init__(self) -> None:
        if self.l_max < 1:
            raise ContractViolation("l_max must be >= 1")
        if len(self.indices) > self.l_max:
            raise ContractViolation(
                f"sequence length {len(self.indices)} exceeds l_max={self.l_max}"
            )

    @property
    def length(self) -> int:
        return len(self.indices)


def make_pool(dataset: Dataset, pair_indices: Sequence[int]) -> dict[str, Example]:
    """Pool of one training example per label, keyed by label id in label-set
    order (classification) or first-appearance order (fact retrieval)."""
    chosen = [dataset.train[i] for i in pair_indices]
    labels = [ex.label for ex in chosen]
    if len(set(labels)) != len(labels):
        raise ContractViolation("pool must hold one example per label")
    if dataset.label_set is not None:
        order = [lid for lid in dataset.label_set.ids() if lid in labels]
        if len(order) != dataset.label_set.n_labels:
            raise ContractViolation("pool must cover every label in the label set")
    else:
        order = labels
    by_label = {ex.label: ex for ex in chosen}
    return {lid: by_label[lid] for lid in order}


def min_ce_fitness(
    seq_indices: Sequence[int],
    pool: Mapping[str, Example],
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    sep: SeparatorEmbedding | str | None = None,
    assembler: PromptAssembler | None = None,
) -> float:
    """Worst-case cross-entropy over the pool examples as queries.

    Equivalent to scoring the least probable gold answer; lower is better.
    """
    if not seq_indices:
        raise ContractViolation("cannot score an empty prompt sequence")
    if assembler is None:
        assembler = PromptAssembler(dataset, tmpl)
    metric = "p_at_1" if tmpl.task == "fact-retrieval" else "accuracy"
    cand = candidates_for(metric, dataset)
    prompts = [assembler.assemble(seq_indices, ex) for ex in pool.values()]
    dists = oracle.score_many(prompts, cand, sep)
    return max(
        cross_entropy(dist, gold_candidate(ex, dataset, metric))
        for ex, dist in zip(pool.values(), dists)
    )


def _balance_ok(labels: Sequence[str], pool_labels: Sequence[str], mode: str) -> bool:
    if mode == "none":
        return True
    if mode == "alternating":
        return all(labels[i] != labels[i + 1] for i in range(len(labels) - 1))
    counts = [labels.count(lid) for lid in pool_labels]
    return max(counts) - min(counts) <= 1


def expand(
    seq: GrowableSequence,
    pool: Mapping[str, Example],
    dataset: Dataset,
    balance: str = "balanced",
) -> list[GrowableSequence]:
    """All sequences formed by inserting exactly one pool example.

    Pre-filter there are (l_c + 1) * N_labels candidates: every insertion
    position crossed with every label's example, generated in (position,
    label ordinal) order.  The balance filter then keeps a candidate only if
    no label outnumbers another by more than one ("balanced") or if labels
    strictly alternate ("alternating").
    """
    if seq.length >= seq.l_max:
        raise ContractViolation("sequence is already at l_max")
    if balance not in BALANCE_MODES:
        raise ContractViolation(f"unknown balance mode {balance!r}")
    pool_labels = list(pool)
    out = []
    for position in range(seq.length + 1):
        for lid in pool_labels:
            idx = pool[lid].index
            candidate = seq.indices[:position] + (idx,) + seq.indices[position:]
            labels = [dataset.train[i].label for i in candidate]
            if _balance_ok(labels, pool_labels, balance):
                out.append(GrowableSequence(candidate, seq.l_max))
    return out


def grow_greedy(
    pool: Mapping[str, Example],
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    l_max: int = 10,
    balance: str = "balanced",
    sep: SeparatorEmbedding | str | None = None,
) -> tuple[GrowableSequence, list[dict]]:
    """Grow a prompt sequence to l_max, keeping the best single insertion at
    each step by worst-case loss; ties go to the first candidate in
    (position, label ordinal) order.  Returns the sequence and a per-step
    trace of the chosen candidate and its fitness.
    """
    assembler = PromptAssembler(dataset, tmpl)
    seq = GrowableSequence((), l_max)
    trace: list[dict] = []
    while seq.length < l_max:
        candidates = expand(seq, pool, dataset, balance)
        if not candidates:
            raise ContractViolation(
                f"balance mode {balance!r} left no admissible insertion at length {seq.length}"
            )
        best = None
        best_fit = None
        for cand in candidates:
            fit = min_ce_fitness(cand.indices, pool, dataset, tmpl, oracle, sep, assembler)
            if best_fit is None or fit < best_fit:
                best, best_fit = cand, fit
        assert best is not None and best_fit is not None
        seq = best
        trace.append(
            {
                "length": seq.length,
                "indices": list(seq.indices),
                "fitness": best_fit,
                "n_candidates": len(candidates),
            }
        )
    return seq, trace


def repeat_label_pattern(
    pattern: Sequence[str], pool: Mapping[str, Example]
) -> tuple[int, ...]:
    """Prompt sequence realizing a label pattern with one example per label."""
    out = []
    for lid in pattern:
        if lid not in pool:
            raise ContractViolation(f"pattern label {lid!r} has no example in the pool")
        out.append(pool[lid].index)
    return tuple(out)


def parse_label_pattern(pattern: str, pool: Mapping[str, Example]) -> list[str]:
    """Map a +/- shorthand string onto pool label ids in pool order.

    '-' is the first label of the pool, '+' the second; any other character
    is rejected.
    """
    labels = list(pool)
    if len(labels) < 2:
        raise ContractViolation("+/- patterns need a two-label pool")
    mapping = {"-": labels[0], "+": labels[1]}
    try:
        return [mapping[ch] for ch in pattern]
    except KeyError as exc:
        raise ContractViolation(f"unknown pattern character {exc.args[0]!r}") from exc
