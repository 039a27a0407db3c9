"""Scoring oracles and distribution operations.

The central abstraction is an oracle that maps an assembled prompt to a
probability distribution at the mask position.  Two oracles ship here and in
``http_oracle``: a fully deterministic toy scorer over a planted target
ordering (so search correctness is checkable without any language model), and
an HTTP client speaking the JSON protocol below to a remote masked-LM
service.

Toy scorer definition: for a query x with gold answer y, the gold candidate's
logit is

    z = alpha * tau(c, sigma_star) + w . s + b(x)

and every other candidate's logit is 0, where tau is Kendall rank correlation
between the prompt's ordering of its indices and the planted target ordering
restricted to those indices (normalized to [-1, 1]), s is the separator
vector (term dropped for a literal separator), and b is a per-query bias.
The distribution is the softmax over these logits, so the gold probability is
strictly increasing in tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Protocol, Sequence, Union

import numpy as np

from .core import Dataset, PromptText
from .errors import ContractViolation

Candidates = Union[Sequence[str], Literal["vocab"]]

GradBatch = Sequence[tuple[PromptText, str, Candidates]]


# ---------------------------------------------------------------------------
# Kendall rank correlation over (partial) permutations
# ---------------------------------------------------------------------------

def kendall_tau(order: Sequence[int], reference: Sequence[int]) -> float:
    """Rank correlation between ``order`` and a target ordering, in [-1, 1].

    ``reference`` ranks the full index universe; it is restricted to the
    indices present in ``order``.  Pairs of repeated indices (allowed in
    one-shot prompt sequences) contribute zero while the pair count in the
    denominator is unchanged.  Fewer than two items carry no ordering
    information and score 0.
    """
    rank = {idx: r for r, idx in enumerate(reference)}
    try:
        seq = [rank[i] for i in order]
    except KeyError as exc:
        raise ContractViolation(f"index {exc.args[0]} not in the reference ordering") from exc
    n = len(seq)
    pairs = n * (n - 1) // 2
    if pairs == 0:
        return 0.0
    net = 0
    for i in range(n - 1):
        a = seq[i]
        for b in seq[i + 1:]:
            if b > a:
                net += 1
            elif b < a:
                net -= 1
    return net / pairs


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreDistribution:
    """Probabilities over a candidate set; sums to 1 within 1e-6."""

    candidates: tuple[str, ...]
    probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.candidates) != len(self.probs):
            raise ContractViolation("candidates and probs length mismatch")
        if not self.candidates:
            raise ContractViolation("candidate set is empty")
        total = 0.0
        for p in self.probs:
            if p < -1e-9 or p > 1.0 + 1e-9:
                raise ContractViolation(f"probability {p} outside [0, 1]")
            total += p
        if abs(total - 1.0) > 1e-6:
            raise ContractViolation(f"probabilities sum to {total}, not 1")

    def p(self, candidate: str) -> float:
        for c, p in zip(self.candidates, self.probs):
            if c == candidate:
                return p
        raise ContractViolation(f"candidate {candidate!r} not in distribution")


def cross_entropy(dist: ScoreDistribution, gold: str) -> float:
    """-ln p(gold) in nats; raises if gold is not a candidate."""
    p = dist.p(gold)
    if p <= 0.0:
        return math.inf
    return -math.log(p)


def predict_top1(dist: ScoreDistribution) -> str:
    """Argmax candidate; ties broken by lowest candidate ordinal."""
    best = 0
    best_p = dist.probs[0]
    for i in range(1, len(dist.probs)):
        if dist.probs[i] > best_p:
            best = i
            best_p = dist.probs[i]
    return dist.candidates[best]


@dataclass(frozen=True)
class SeparatorEmbedding:
    """Real vector standing in for the separator token's embedding."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in self.values):
            raise ContractViolation("separator embedding entries must be finite")

    @property
    def dim(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)

    @classmethod
    def zeros(cls, dim: int) -> "SeparatorEmbedding":
        return cls((0.0,) * dim)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "SeparatorEmbedding":
        return cls(tuple(float(v) for v in np.asarray(arr, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Oracle protocol
# ---------------------------------------------------------------------------

class ScoringOracle(Protocol):
    """What the search, separator learning and evaluation code rely on."""

    @property
    def dim(self) -> int: ...

    @property
    def supports_grad(self) -> bool: ...

    @property
    def vocab(self) -> tuple[str, ...]: ...

    def score(
        self,
        prompt: PromptText,
        candidates: Candidates,
        sep: SeparatorEmbedding | str | None = None,
    ) -> ScoreDistribution: ...

    def score_many(
        self,
        prompts: Sequence[PromptText],
        candidates: Candidates,
        sep: SeparatorEmbedding | str | None = None,
    ) -> list[ScoreDistribution]: ...

    def loss_and_grad_sep(
        self, batch: GradBatch, sep: SeparatorEmbedding
    ) -> tuple[float, np.ndarray]: ...


# ---------------------------------------------------------------------------
# Toy scorer with a planted optimum
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyScorerParams:
    """Parameters of the planted landscape.

    ``query_weights`` is keyed by (split, index) and defaults to 0 bias.
    """

    sigma_star: tuple[int, ...]
    alpha: float = 4.0
    dim: int = 8
    w: tuple[float, ...] | None = None
    query_weights: Mapping[tuple[str, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        problem = validate_sigma_star(self.sigma_star)
        if problem:
            raise ContractViolation(problem)
        if self.alpha < 0:
            raise ContractViolation("alpha must be >= 0")
        if self.w is not None and len(self.w) != self.dim:
            raise ContractViolation(f"w has length {len(self.w)}, expected dim={self.dim}")


def validate_sigma_star(sigma: Sequence[int]) -> str | None:
    if sorted(sigma) != list(range(len(sigma))):
        return "sigma_star must be a permutation of 0..N_train-1"
    return None


class ToyScorer:
    """Deterministic differentiable oracle over a planted target ordering."""

    def __init__(
        self,
        params: ToyScorerParams,
        gold: Mapping[tuple[str, int], str],
        vocab: Sequence[str] = (),
    ):
        self.params = params
        self._gold = dict(gold)
        self._vocab = tuple(vocab)
        self._w = np.asarray(params.w, dtype=np.float64) if params.w is not None else None
        self._tau_cache: dict[tuple[int, ...], float] = {}

    @classmethod
    def for_dataset(
        cls,
        dataset: Dataset,
        params: ToyScorerParams,
        extra_vocab: Sequence[str] = (),
    ) -> "ToyScorer":
        """Oracle that knows the gold answer of every example in the dataset."""
        if len(params.sigma_star) != dataset.n_train:
            raise ContractViolation(
                f"sigma_star covers {len(params.sigma_star)} indices, "
                f"dataset has N_train={dataset.n_train}"
            )
        gold: dict[tuple[str, int], str] = {}
        for split_name in ("train", "validation", "test"):
            for ex in dataset.split(split_name):
                if dataset.label_set is not None:
                    gold[(split_name, ex.index)] = dataset.label_set.surface(ex.label)
                else:
                    gold[(split_name, ex.index)] = ex.label
        vocab = sorted(set(gold.values()) | set(extra_vocab))
        return cls(params, gold, vocab)

    @property
    def dim(self) -> int:
        return self.params.dim

    @property
    def supports_grad(self) -> bool:
        return True

    @property
    def vocab(self) -> tuple[str, ...]:
        return self._vocab

    def _tau(self, context: tuple[int, ...]) -> float:
        tau = self._tau_cache.get(context)
        if tau is None:
            tau = kendall_tau(context, self.params.sigma_star)
            self._tau_cache[context] = tau
        return tau

    def _resolve_candidates(self, candidates: Candidates) -> tuple[str, ...]:
        if candidates == "vocab":
            if not self._vocab:
                raise ContractViolation("toy scorer has an empty vocabulary")
            return self._vocab
        cand = tuple(candidates)
        if not cand:
            raise ContractViolation("candidate set is empty")
        return cand

    def _gold_logit(
        self, prompt: PromptText, sep: SeparatorEmbedding | str | None
    ) -> tuple[float, str]:
        meta = prompt.meta
        if meta is None:
            raise ContractViolation("toy scorer needs prompt provenance metadata")
        if prompt.n_masks != 1:
            raise ContractViolation(f"prompt has {prompt.n_masks} masks, expected 1")
        key = (meta.query_split, meta.query_index)
        try:
            gold = self._gold[key]
        except KeyError:
            raise ContractViolation(f"unknown query {key}") from None
        z = self.params.alpha * self._tau(meta.context_indices)
        if isinstance(sep, SeparatorEmbedding) and self._w is not None:
            if sep.dim != self.dim:
                raise ContractViolation(f"separator dim {sep.dim} != oracle dim {self.dim}")
            z += float(self._w @ sep.as_array())
        z += self.params.query_weights.get(key, 0.0)
        return z, gold

    @staticmethod
    def _gold_probability(z: float, n_candidates: int) -> float:
        # softmax of [z, 0, ..., 0]; stable for large |z|
        m = max(z, 0.0)
        num = math.exp(z - m)
        return num / (num + (n_candidates - 1) * math.exp(-m))

    def score(
        self,
        prompt: PromptText,
        candidates: Candidates,
        sep: SeparatorEmbedding | str | None = None,
    ) -> ScoreDistribution:
        cand = self._resolve_candidates(candidates)
        z, gold = self._gold_logit(prompt, sep)
        n = len(cand)
        if gold not in cand:
            probs = (1.0 / n,) * n
            return ScoreDistribution(cand, probs)
        if n == 1:
            return ScoreDistribution(cand, (1.0,))
        p_gold = self._gold_probability(z, n)
        p_other = (1.0 - p_gold) / (n - 1)
        probs = tuple(p_gold if c == gold else p_other for c in cand)
        return ScoreDistribution(cand, probs)

    def score_many(
        self,
        prompts: Sequence[PromptText],
        candidates: Candidates,
        sep: SeparatorEmbedding | str | None = None,
    ) -> list[ScoreDistribution]:
        return [self.score(p, candidates, sep) for p in prompts]

    def loss_and_grad_sep(
        self, batch: GradBatch, sep: SeparatorEmbedding
    ) -> tuple[float, np.ndarray]:
        """Mean cross-entropy over the batch and its gradient wrt ``sep``.

        Per prompt the analytic gradient is (p_gold - 1) * w.
        """
        if not batch:
            raise ContractViolation("empty gradient batch")
        total = 0.0
        grad = np.zeros(self.dim, dtype=np.float64)
        for prompt, gold, candidates in batch:
            cand = self._resolve_candidates(candidates)
            if gold not in cand:
                raise ContractViolation(f"gold {gold!r} not in candidate set")
            z, oracle_gold = self._gold_logit(prompt, sep)
            if oracle_gold != gold:
                # Caller's gold disagrees with the planted truth; score the
                # caller's answer, which holds a zero logit.
                p = (1.0 - self._gold_probability(z, len(cand))) / (len(cand) - 1)
                total += -math.log(p) if p > 0 else math.inf
                if self._w is not None:
                    p_gold = self._gold_probability(z, len(cand))
                    grad += p_gold * self._w  # d(-ln p_other)/ds
                continue
            p_gold = self._gold_probability(z, len(cand))
            total += -math.log(p_gold) if p_gold > 0 else math.inf
            if self._w is not None:
                grad += (p_gold - 1.0) * self._w
        n = len(batch)
        return total / n, grad / n
