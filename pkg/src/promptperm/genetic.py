"""Permutation search: fitness, elitist selection, uniqueness-preserving
single-point crossover, swap mutation, and the epoch loop with
validation-based model selection.

Individuals are plain tuples of unique training indices; lower fitness (mean
cross-entropy in nats) is better.  In ``inverted`` mode every ranking in the
procedure is reversed, which searches for the worst permutations instead.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from typing import IO, TYPE_CHECKING, Sequence

from .core import Dataset, PromptAssembler, PromptTemplate
from .errors import ConfigError, ContractViolation
from .metrics import candidates_for, gold_candidate, split_metric
from .scoring import ScoringOracle, SeparatorEmbedding, cross_entropy

if TYPE_CHECKING:
    from .separator import SepTrainConfig

FITNESS_MODES = ("average", "minimum", "inverted")

Individual = tuple[int, ...]


@dataclass
class GaConfig:
    n_population: int = 100
    p_mutate: float = 0.1
    elite_ratio: float = 0.1
    selection_size: int = 25
    n_epochs: int = 100
    k: int = 10
    fitness_mode: str = "average"
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.n_population < 1:
            raise ConfigError("population size must be >= 1")
        if not 0.0 <= self.p_mutate <= 1.0:
            raise ConfigError("mutation probability must be in [0, 1]")
        if not 0.0 <= self.elite_ratio <= 1.0:
            raise ConfigError("elite ratio must be in [0, 1]")
        if not 1 <= self.selection_size <= self.n_population:
            raise ConfigError("selection size must be in [1, population size]")
        if self.n_epochs < 0:
            raise ConfigError("epoch count must be >= 0")
        if self.k < 1:
            raise ConfigError("prompt size k must be >= 1")
        if self.fitness_mode not in FITNESS_MODES:
            raise ConfigError(f"unknown fitness mode {self.fitness_mode!r}")


@dataclass(frozen=True)
class FitnessRecord:
    """Per-epoch best individual with its train fitness and validation score."""

    epoch: int
    permutation: Individual
    train_fitness: float
    val_accuracy: float
    separator: tuple[float, ...] | None = None
    rng_digest: str = ""

    def __post_init__(self) -> None:
        if self.train_fitness < 0:
            raise ContractViolation("train fitness (cross-entropy) must be >= 0")
        if not 0.0 <= self.val_accuracy <= 1.0:
            raise ContractViolation("validation accuracy must be in [0, 1]")

    def to_history_line(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "best_train_fitness": self.train_fitness,
                "best_val_accuracy": self.val_accuracy,
                "permutation": list(self.permutation),
                "rng_digest": self.rng_digest,
            },
            sort_keys=True,
        )


@dataclass
class Population:
    individuals: list[Individual]

    @property
    def size(self) -> int:
        return len(self.individuals)


def random_permutation(n_train: int, k: int, rng: random.Random) -> Individual:
    """Uniformly random ordered k-subset of [0, n_train)."""
    return tuple(rng.sample(range(n_train), k))


def init_population(cfg: GaConfig, n_train: int, rng: random.Random) -> Population:
    if cfg.k > n_train:
        raise ConfigError(f"prompt size k={cfg.k} exceeds N_train={n_train}")
    return Population([random_permutation(n_train, cfg.k, rng) for _ in range(cfg.n_population)])


# ---------------------------------------------------------------------------
# Variation operators
# ---------------------------------------------------------------------------

def _last_absent(v: Individual, excluded: frozenset[int] | set[int], s: int) -> list[int]:
    kept = [x for x in v if x not in excluded]
    return kept[len(kept) - s:] if s > 0 else []


def _first_absent(v: Individual, excluded: frozenset[int] | set[int], s: int) -> list[int]:
    out: list[int] = []
    for x in v:
        if len(out) == s:
            break
        if x not in excluded:
            out.append(x)
    return out


def crossover(
    c1: Sequence[int], c2: Sequence[int], j: int
) -> tuple[Individual, Individual, Individual, Individual]:
    """Single-point crossover at position j in [1, k], repaired to keep
    indices unique.

    d1 keeps c1's head and fills the tail with the last k-j elements of c2
    absent from that head; d2 is symmetric.  d3 keeps c1's tail and fills the
    head with the first j elements of c2 absent from that tail; d4 symmetric.
    """
    c1 = tuple(c1)
    c2 = tuple(c2)
    k = len(c1)
    if len(c2) != k:
        raise ContractViolation("parents must have equal length")
    if not 1 <= j <= k:
        raise ContractViolation(f"crossover point {j} outside [1, {k}]")

    head1, tail1 = c1[:j], c1[j:]
    head2, tail2 = c2[:j], c2[j:]
    d1 = head1 + tuple(_last_absent(c2, set(head1), k - j))
    d2 = head2 + tuple(_last_absent(c1, set(head2), k - j))
    d3 = tuple(_first_absent(c2, set(tail1), j)) + tail1
    d4 = tuple(_first_absent(c1, set(tail2), j)) + tail2
    for d in (d1, d2, d3, d4):
        if len(d) != k:
            raise ContractViolation(
                "not enough non-conflicting elements to repair crossover "
                "(parents drawn from different index universes?)"
            )
    return d1, d2, d3, d4


def mutate(c: Sequence[int], p_m: float, n_train: int, rng: random.Random) -> Individual:
    """Mutate each position independently with probability p_m.

    A mutated position receives a uniformly random index among the other
    training examples; if that index already occurs in the individual, the
    two positions swap values, keeping indices unique.
    """
    vals = list(c)
    if p_m <= 0.0 or n_train < 2:
        return tuple(vals)
    pos = {v: i for i, v in enumerate(vals)}
    for i in range(len(vals)):
        if rng.random() >= p_m:
            continue
        cur = vals[i]
        repl = rng.randrange(n_train - 1)
        if repl >= cur:
            repl += 1
        other = pos.get(repl)
        if other is None:
            del pos[cur]
            vals[i] = repl
            pos[repl] = i
        else:
            vals[i], vals[other] = vals[other], vals[i]
            pos[repl] = i
            pos[cur] = other
    return tuple(vals)


def rank_order(fitnesses: Sequence[float], mode: str) -> list[int]:
    """Indices sorted fittest first; ties keep original order."""
    reverse = mode == "inverted"
    return sorted(range(len(fitnesses)), key=lambda i: fitnesses[i], reverse=reverse)


def select_and_breed(
    pop: Population,
    fitnesses: Sequence[float],
    cfg: GaConfig,
    n_train: int,
    rng: random.Random,
) -> Population:
    """Elitism plus crossover/mutation over the top ``selection_size``.

    Parent pairs are sampled uniformly with replacement from the breeding
    pool (parents distinct within a pair when possible); each crossover's
    four children are mutated and taken in order until the population is
    refilled.
    """
    if len(fitnesses) != pop.size:
        raise ContractViolation("need one fitness value per individual")
    order = rank_order(fitnesses, cfg.fitness_mode)
    elite_n = int(cfg.elite_ratio * pop.size)
    next_individuals: list[Individual] = [pop.individuals[i] for i in order[:elite_n]]
    pool = order[: min(cfg.selection_size, pop.size)]
    while len(next_individuals) < pop.size:
        if len(pool) >= 2:
            i1, i2 = rng.sample(pool, 2)
        else:
            i1 = i2 = pool[0]
        j = rng.randint(1, cfg.k)
        for child in crossover(pop.individuals[i1], pop.individuals[i2], j):
            next_individuals.append(mutate(child, cfg.p_mutate, n_train, rng))
            if len(next_individuals) == pop.size:
                break
    return Population(next_individuals)


# ---------------------------------------------------------------------------
# Fitness
# ---------------------------------------------------------------------------

def fitness(
    c: Sequence[int],
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    sep: SeparatorEmbedding | str | None = None,
    mode: str = "average",
    assembler: PromptAssembler | None = None,
) -> float:
    """Cross-entropy of the gold answers over all training queries, in nats.

    ``average`` (and ``inverted``, which only flips rankings elsewhere) take
    the mean; ``minimum`` takes the worst case, i.e. the loss of the least
    probable gold answer.  Queries are scored with drop_query=False: an
    example may sit in the prompt and be the query at once.
    """
    if assembler is None:
        assembler = PromptAssembler(dataset, tmpl)
    metric = "p_at_1" if tmpl.task == "fact-retrieval" else "accuracy"
    cand = candidates_for(metric, dataset)
    prompts = [assembler.assemble(c, ex) for ex in dataset.train]
    dists = oracle.score_many(prompts, cand, sep)
    losses = [
        cross_entropy(dist, gold_candidate(ex, dataset, metric))
        for ex, dist in zip(dataset.train, dists)
    ]
    if mode == "minimum":
        return max(losses)
    return sum(losses) / len(losses)


def _rng_digest(rng: random.Random) -> str:
    return hashlib.sha256(repr(rng.getstate()).encode()).hexdigest()[:16]


@dataclass
class SearchResult:
    best: Individual
    best_separator: SeparatorEmbedding | None
    best_record: FitnessRecord
    history: list[FitnessRecord]
    n_fitness_evals: int = 0


def _pick_best_record(history: Sequence[FitnessRecord], mode: str) -> FitnessRecord:
    # Default: highest validation accuracy, ties by best (lowest) train
    # fitness, then earliest epoch.  Inverted search flips both orderings.
    if mode == "inverted":
        key = lambda r: (r.val_accuracy, -r.train_fitness, r.epoch)
        return min(history, key=key)
    key = lambda r: (-r.val_accuracy, r.train_fitness, r.epoch)
    return min(history, key=key)


def run_search(
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    cfg: GaConfig,
    sep_train: "SepTrainConfig | None" = None,
    history_file: IO[str] | None = None,
) -> SearchResult:
    """The full search loop: per epoch, score the population, validate the
    fittest individual, breed the next generation, and optionally run one
    separator-learning phase on the new population.

    The answer is the (permutation, separator) pair whose record wins
    validation-based model selection across epochs.  If separator learning is
    requested but the oracle cannot compute gradients, the search proceeds
    without it (a warning is logged).
    """
    from . import separator as sep_mod  # local import to avoid a cycle

    if not dataset.validation:
        raise ConfigError("search needs a validation split")
    if len(dataset.validation) != dataset.n_train:
        raise ConfigError(
            f"validation split has {len(dataset.validation)} examples, "
            f"expected N_train={dataset.n_train}"
        )
    if cfg.k > dataset.n_train:
        raise ConfigError(f"prompt size k={cfg.k} exceeds N_train={dataset.n_train}")

    rng = random.Random(cfg.rng_seed)
    assembler = PromptAssembler(dataset, tmpl)
    metric = "p_at_1" if tmpl.task == "fact-retrieval" else "accuracy"

    sep: SeparatorEmbedding | str | None = None
    optimizer = None
    learning_sep = False
    if sep_train is not None:
        if oracle.supports_grad:
            sep = sep_mod.init_separator(oracle)
            optimizer = sep_mod.AdamW.fresh(oracle.dim, sep_train)
            learning_sep = True
        else:
            sep_mod.logger.warning(
                "oracle lacks gradient support; searching without separator learning"
            )

    sep_version = 0
    cache: dict[tuple[Individual, int], float] = {}
    n_evals = 0

    def eval_fitness(c: Individual) -> float:
        nonlocal n_evals
        key = (c, sep_version)
        value = cache.get(key)
        if value is None:
            value = fitness(c, dataset, tmpl, oracle, sep, cfg.fitness_mode, assembler)
            cache[key] = value
            n_evals += 1
        return value

    def val_score(c: Individual) -> float:
        return split_metric(
            c, dataset.validation, dataset, tmpl, oracle, sep, metric, assembler
        )

    def snapshot_sep() -> tuple[float, ...] | None:
        return sep.values if isinstance(sep, SeparatorEmbedding) else None

    pop = init_population(cfg, dataset.n_train, rng)
    history: list[FitnessRecord] = []

    def emit(record: FitnessRecord) -> None:
        history.append(record)
        if history_file is not None:
            history_file.write(record.to_history_line() + "\n")
            history_file.flush()

    if cfg.n_epochs == 0:
        # Degenerate run: pick from the initial random population by
        # validation accuracy directly.
        for c in pop.individuals:
            emit(
                FitnessRecord(
                    epoch=0,
                    permutation=c,
                    train_fitness=eval_fitness(c),
                    val_accuracy=val_score(c),
                    separator=snapshot_sep(),
                    rng_digest=_rng_digest(rng),
                )
            )
    else:
        for epoch in range(cfg.n_epochs):
            fits = [eval_fitness(c) for c in pop.individuals]
            best_i = rank_order(fits, cfg.fitness_mode)[0]
            best = pop.individuals[best_i]
            emit(
                FitnessRecord(
                    epoch=epoch,
                    permutation=best,
                    train_fitness=fits[best_i],
                    val_accuracy=val_score(best),
                    separator=snapshot_sep(),
                    rng_digest=_rng_digest(rng),
                )
            )
            pop = select_and_breed(pop, fits, cfg, dataset.n_train, rng)
            if learning_sep:
                assert optimizer is not None and isinstance(sep, SeparatorEmbedding)
                batch = sep_mod.build_sep_training_set(pop, dataset, tmpl, assembler)
                sep, _ = sep_mod.train_separator(sep, batch, oracle, optimizer, sep_train, rng)
                sep_version += 1

    best_record = _pick_best_record(history, cfg.fitness_mode)
    best_sep = (
        SeparatorEmbedding(best_record.separator)
        if best_record.separator is not None
        else None
    )
    return SearchResult(
        best=best_record.permutation,
        best_separator=best_sep,
        best_record=best_record,
        history=history,
        n_fitness_evals=n_evals,
    )
