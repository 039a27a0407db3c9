"""Experiment harness: run configuration, metrics, baselines, persistence.

A run is fully described by a RunConfig; given the same config and the toy
oracle, a replay produces a byte-identical canonical result.  Wall time is
kept out of the canonical serialization for that reason.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import random
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .core import (
    Dataset,
    Example,
    LabelSet,
    PromptTemplate,
    default_label_set,
    default_template,
    load_dataset,
    load_template_config,
)
from .errors import ConfigError
from .genetic import GaConfig, run_search
from .http_oracle import HttpScorer
from .metrics import split_metric
from .oneshot import grow_greedy, make_pool, parse_label_pattern, repeat_label_pattern
from .scoring import ScoringOracle, SeparatorEmbedding, ToyScorer, ToyScorerParams
from .separator import SepTrainConfig, save_separator

MODES = ("pero", "pero-no-sep", "inverse", "random-baseline", "oneshot", "label-pattern")

ENDPOINT_ENV_VAR = "PROMPTPERM_ENDPOINT"


@dataclass
class ToyOracleConfig:
    alpha: float = 4.0
    dim: int = 8
    sigma_star: list[int] | None = None  # None: derived from the run seed
    w: list[float] | None = None  # None: zero vector (no separator term)
    query_bias: dict[str, float] = field(default_factory=dict)  # "split:index" -> bias

    def bias_map(self) -> dict[tuple[str, int], float]:
        out: dict[tuple[str, int], float] = {}
        for key, value in self.query_bias.items():
            split_name, _, idx = key.partition(":")
            if not idx:
                raise ConfigError(f"toy query_bias key {key!r} must look like 'split:index'")
            out[(split_name, int(idx))] = float(value)
        return out


@dataclass
class RunConfig:
    mode: str
    task: str = "sentiment"
    train_path: str | None = None
    validation_path: str | None = None
    test_path: str | None = None
    template_config: str | None = None
    oracle: str = "toy"  # toy | http
    endpoint: str | None = None
    seed: int = 0
    out_dir: str | None = None
    ga: GaConfig = field(default_factory=GaConfig)
    sep: SepTrainConfig | None = field(default_factory=SepTrainConfig)
    toy: ToyOracleConfig = field(default_factory=ToyOracleConfig)
    sep_init_token: str | None = None
    n_baseline_samples: int = 100
    pair: list[int] | None = None
    l_max: int = 10
    balance: str = "balanced"
    label_pattern: str | None = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.oracle not in ("toy", "http"):
            raise ConfigError(f"unknown oracle kind {self.oracle!r}")
        if self.oracle == "http" and not self.resolved_endpoint():
            raise ConfigError(f"http oracle needs --endpoint or ${ENDPOINT_ENV_VAR}")
        if self.mode in ("oneshot", "label-pattern") and not self.pair:
            raise ConfigError(f"mode {self.mode} requires a pair of example indices")
        if self.mode == "label-pattern" and not self.label_pattern:
            raise ConfigError("mode label-pattern requires a label pattern string")
        if self.n_baseline_samples < 1:
            raise ConfigError("baseline sample count must be >= 1")
        if self.l_max < 1:
            raise ConfigError("l_max must be >= 1")

    def resolved_endpoint(self) -> str | None:
        return os.environ.get(ENDPOINT_ENV_VAR) or self.endpoint

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        if "ga" in raw and isinstance(raw["ga"], dict):
            raw["ga"] = GaConfig(**raw["ga"])
        if raw.get("sep") is not None and isinstance(raw["sep"], dict):
            raw["sep"] = SepTrainConfig(**raw["sep"])
        if "toy" in raw and isinstance(raw["toy"], dict):
            raw["toy"] = ToyOracleConfig(**raw["toy"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class RunResult:
    mode: str
    task: str
    metric: str
    best_indices: list[int] | None
    is_sequence: bool
    separator: dict | None
    train_fitness: float | None
    val_accuracy: float | None
    test_score: float | None
    history: list[dict]
    extra: dict
    n_fitness_evals: int
    config: dict
    wall_time_s: float = 0.0

    def canonical_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("wall_time_s")
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# Label-balanced validation handling
# ---------------------------------------------------------------------------

def label_balance_gap(examples: Sequence[Example], label_set: LabelSet) -> int:
    counts = [sum(1 for ex in examples if ex.label == lid) for lid in label_set.ids()]
    return max(counts) - min(counts)


def balanced_validation_subset(
    examples: Sequence[Example], size: int, label_set: LabelSet
) -> tuple[Example, ...]:
    """First-come greedy label-balanced subset from the beginning of a split."""
    if size < 1:
        raise ConfigError("validation size must be >= 1")
    quota = math.ceil(size / label_set.n_labels)
    counts = {lid: 0 for lid in label_set.ids()}
    chosen: list[Example] = []
    for ex in examples:
        if len(chosen) == size:
            break
        if counts[ex.label] < quota:
            counts[ex.label] += 1
            chosen.append(ex)
    if len(chosen) < size:
        raise ConfigError(
            f"could not assemble a balanced validation set of size {size} "
            f"from {len(examples)} examples"
        )
    return tuple(
        dataclasses.replace(ex, index=i, split="validation") for i, ex in enumerate(chosen)
    )


# ---------------------------------------------------------------------------
# Oracles and datasets from a config
# ---------------------------------------------------------------------------

def resolve_toy_config(toy: ToyOracleConfig, n_train: int, seed: int) -> ToyOracleConfig:
    """Fill the planted ordering deterministically from the run seed."""
    if toy.sigma_star is not None:
        return toy
    rng = random.Random(seed + 982451653)
    sigma = list(range(n_train))
    rng.shuffle(sigma)
    return dataclasses.replace(toy, sigma_star=sigma)


def build_toy_oracle(toy: ToyOracleConfig, dataset: Dataset) -> ToyScorer:
    if toy.sigma_star is None:
        raise ConfigError("toy oracle config must be resolved before building")
    params = ToyScorerParams(
        sigma_star=tuple(toy.sigma_star),
        alpha=toy.alpha,
        dim=toy.dim,
        w=tuple(toy.w) if toy.w is not None else None,
        query_weights=toy.bias_map(),
    )
    return ToyScorer.for_dataset(dataset, params)


def build_oracle(config: RunConfig, dataset: Dataset) -> ScoringOracle:
    if config.oracle == "toy":
        return build_toy_oracle(config.toy, dataset)
    endpoint = config.resolved_endpoint()
    assert endpoint is not None
    return HttpScorer(endpoint)


def load_run_dataset(config: RunConfig) -> Dataset:
    if config.train_path is None:
        raise ConfigError("config needs a train dataset path")
    _, label_set = template_for(config)
    return load_dataset(
        config.train_path,
        config.task,
        label_set,
        validation_path=config.validation_path,
        test_path=config.test_path,
    )


def template_for(config: RunConfig) -> tuple[PromptTemplate, LabelSet | None]:
    if config.template_config:
        table = load_template_config(config.template_config)
        if config.task not in table:
            raise ConfigError(
                f"template config has no entry for task {config.task!r}"
            )
        tmpl, label_set = table[config.task]
        if label_set is None:
            label_set = default_label_set(config.task)
        return tmpl, label_set
    return default_template(config.task), default_label_set(config.task)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def evaluate(
    indices: Sequence[int],
    dataset: Dataset,
    split: str | Sequence[Example],
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    sep: SeparatorEmbedding | str | None = None,
    metric: str = "accuracy",
) -> float:
    """Accuracy (over the label set) or P@1 (over the vocabulary) of the
    prompt built from ``indices`` on a data split."""
    examples = dataset.split(split) if isinstance(split, str) else split
    return split_metric(indices, examples, dataset, tmpl, oracle, sep, metric)


def random_permutation_baseline(
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    k: int,
    n_samples: int = 100,
    seed: int = 0,
    metric: str = "accuracy",
    sep: SeparatorEmbedding | str | None = None,
    split: str = "test",
) -> tuple[float, float, list[float]]:
    """Mean and population standard deviation of the test metric over
    uniformly random permutations."""
    if k > dataset.n_train:
        raise ConfigError(f"prompt size k={k} exceeds N_train={dataset.n_train}")
    rng = random.Random(seed)
    scores = []
    for _ in range(n_samples):
        perm = tuple(rng.sample(range(dataset.n_train), k))
        scores.append(evaluate(perm, dataset, split, tmpl, oracle, sep, metric))
    mean = sum(scores) / len(scores)
    stddev = statistics.pstdev(scores)
    return mean, stddev, scores


def _default_metric(task: str) -> str:
    return "p_at_1" if task == "fact-retrieval" else "accuracy"


def run(config: RunConfig, dataset: Dataset | None = None) -> RunResult:
    """Dispatch a configured run and optionally persist its artifacts.

    ``dataset`` may be supplied directly for in-memory runs; otherwise it is
    loaded from the configured paths.
    """
    config.validate()
    started = time.perf_counter()
    tmpl, _ = template_for(config)
    if dataset is None:
        dataset = load_run_dataset(config)
    if config.oracle == "toy":
        config = dataclasses.replace(
            config, toy=resolve_toy_config(config.toy, dataset.n_train, config.seed)
        )
    oracle = build_oracle(config, dataset)
    metric = _default_metric(config.task)

    out_dir = Path(config.out_dir) if config.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.json").write_text(
            json.dumps(config.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
        )

    if config.mode in ("pero", "pero-no-sep", "inverse"):
        result = _run_search_mode(config, dataset, tmpl, oracle, metric, out_dir)
    elif config.mode == "random-baseline":
        result = _run_baseline_mode(config, dataset, tmpl, oracle, metric)
    elif config.mode == "oneshot":
        result = _run_oneshot_mode(config, dataset, tmpl, oracle, metric)
    else:
        result = _run_label_pattern_mode(config, dataset, tmpl, oracle, metric)

    result.wall_time_s = time.perf_counter() - started
    if out_dir is not None:
        (out_dir / "result.json").write_text(result.canonical_json(), encoding="utf-8")
        (out_dir / "meta.json").write_text(
            json.dumps({"wall_time_s": result.wall_time_s}), encoding="utf-8"
        )
    return result


def _check_validation_balance(config: RunConfig, dataset: Dataset) -> None:
    if config.task == "fact-retrieval" or dataset.label_set is None:
        return
    if not dataset.validation:
        return
    gap = label_balance_gap(dataset.validation, dataset.label_set)
    if gap > 1:
        raise ConfigError(
            f"validation split is label-imbalanced by {gap} (> 1); "
            "use a balanced validation selection"
        )


def _run_search_mode(
    config: RunConfig,
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    metric: str,
    out_dir: Path | None,
) -> RunResult:
    _check_validation_balance(config, dataset)
    ga = dataclasses.replace(
        config.ga,
        rng_seed=config.seed,
        fitness_mode="inverted" if config.mode == "inverse" else config.ga.fitness_mode,
    )
    sep_cfg = config.sep if config.mode == "pero" else None
    history_file = None
    if out_dir is not None:
        history_file = (out_dir / "history.jsonl").open("w", encoding="utf-8")
    try:
        search = run_search(dataset, tmpl, oracle, ga, sep_cfg, history_file)
    finally:
        if history_file is not None:
            history_file.close()

    best_sep = search.best_separator
    test_score = None
    if dataset.test:
        test_score = evaluate(
            search.best, dataset, "test", tmpl, oracle,
            best_sep if best_sep is not None else None, metric,
        )
    separator_payload = None
    if best_sep is not None:
        separator_payload = {
            "dim": best_sep.dim,
            "values": list(best_sep.values),
            "init_token": config.sep_init_token,
        }
        if out_dir is not None:
            save_separator(out_dir / "separator.json", best_sep, config.sep_init_token)
    return RunResult(
        mode=config.mode,
        task=config.task,
        metric=metric,
        best_indices=list(search.best),
        is_sequence=False,
        separator=separator_payload,
        train_fitness=search.best_record.train_fitness,
        val_accuracy=search.best_record.val_accuracy,
        test_score=test_score,
        history=[json.loads(r.to_history_line()) for r in search.history],
        extra={},
        n_fitness_evals=search.n_fitness_evals,
        config=config.to_dict(),
    )


def _run_baseline_mode(
    config: RunConfig,
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    metric: str,
) -> RunResult:
    mean, stddev, scores = random_permutation_baseline(
        dataset,
        tmpl,
        oracle,
        k=config.ga.k,
        n_samples=config.n_baseline_samples,
        seed=config.seed,
        metric=metric,
    )
    return RunResult(
        mode=config.mode,
        task=config.task,
        metric=metric,
        best_indices=None,
        is_sequence=False,
        separator=None,
        train_fitness=None,
        val_accuracy=None,
        test_score=mean,
        history=[],
        extra={"stddev": stddev, "scores": scores, "n_samples": config.n_baseline_samples},
        n_fitness_evals=0,
        config=config.to_dict(),
    )


def _run_oneshot_mode(
    config: RunConfig,
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    metric: str,
) -> RunResult:
    assert config.pair is not None
    pool = make_pool(dataset, config.pair)
    seq, trace = grow_greedy(
        pool, dataset, tmpl, oracle, l_max=config.l_max, balance=config.balance
    )
    test_score = None
    if dataset.test:
        test_score = evaluate(seq.indices, dataset, "test", tmpl, oracle, None, metric)
    return RunResult(
        mode=config.mode,
        task=config.task,
        metric=metric,
        best_indices=list(seq.indices),
        is_sequence=True,
        separator=None,
        train_fitness=trace[-1]["fitness"] if trace else None,
        val_accuracy=None,
        test_score=test_score,
        history=[],
        extra={"trace": trace, "pair": list(config.pair), "balance": config.balance},
        n_fitness_evals=0,
        config=config.to_dict(),
    )


def _run_label_pattern_mode(
    config: RunConfig,
    dataset: Dataset,
    tmpl: PromptTemplate,
    oracle: ScoringOracle,
    metric: str,
) -> RunResult:
    assert config.pair is not None and config.label_pattern is not None
    pool = make_pool(dataset, config.pair)
    pattern = parse_label_pattern(config.label_pattern, pool)
    seq = repeat_label_pattern(pattern, pool)
    test_score = None
    if dataset.test:
        test_score = evaluate(seq, dataset, "test", tmpl, oracle, None, metric)
    return RunResult(
        mode=config.mode,
        task=config.task,
        metric=metric,
        best_indices=list(seq),
        is_sequence=True,
        separator=None,
        train_fitness=None,
        val_accuracy=None,
        test_score=test_score,
        history=[],
        extra={"pattern": config.label_pattern, "pair": list(config.pair)},
        n_fitness_evals=0,
        config=config.to_dict(),
    )


# ---------------------------------------------------------------------------
# Multi-split sweeps
# ---------------------------------------------------------------------------

def make_sweep_splits(
    dataset: Dataset, n_splits: int, split_size: int
) -> list[Dataset]:
    """Successive train slices with balanced validation subsets of the same
    size, mirroring the 5x10-from-first-50 protocol (the 100x10 variant is
    the same call with different counts)."""
    needed = n_splits * split_size
    if dataset.n_train < needed:
        raise ConfigError(
            f"need {needed} training examples for {n_splits} splits of {split_size}, "
            f"got {dataset.n_train}"
        )
    if dataset.label_set is not None and not dataset.validation:
        raise ConfigError("sweep needs a validation split to draw balanced subsets from")
    out = []
    for i in range(n_splits):
        chunk = dataset.train[i * split_size : (i + 1) * split_size]
        train = tuple(
            dataclasses.replace(ex, index=j, split="train") for j, ex in enumerate(chunk)
        )
        if dataset.label_set is not None:
            validation = balanced_validation_subset(
                dataset.validation, split_size, dataset.label_set
            )
        else:
            validation = tuple(
                dataclasses.replace(ex, index=j, split="validation")
                for j, ex in enumerate(dataset.validation[:split_size])
            )
        out.append(
            Dataset(
                train=train,
                validation=validation,
                test=dataset.test,
                label_set=dataset.label_set,
            )
        )
    return out


def sweep(
    config: RunConfig,
    n_splits: int = 5,
    split_size: int = 10,
    dataset: Dataset | None = None,
) -> RunResult:
    """Run the configured mode over successive training splits and aggregate
    the test metric (mean and population standard deviation)."""
    config.validate()
    started = time.perf_counter()
    if dataset is None:
        dataset = load_run_dataset(config)
    splits = make_sweep_splits(dataset, n_splits, split_size)
    out_root = Path(config.out_dir) if config.out_dir else None
    results = []
    for i, split_dataset in enumerate(splits):
        sub = dataclasses.replace(
            config,
            seed=config.seed + i,
            out_dir=str(out_root / f"split_{i:03d}") if out_root else None,
            ga=dataclasses.replace(config.ga, k=min(config.ga.k, split_size)),
        )
        results.append(run(sub, split_dataset))
    scores = [r.test_score for r in results if r.test_score is not None]
    mean = sum(scores) / len(scores) if scores else None
    stddev = statistics.pstdev(scores) if scores else None
    aggregate = RunResult(
        mode=f"sweep:{config.mode}",
        task=config.task,
        metric=results[0].metric,
        best_indices=None,
        is_sequence=False,
        separator=None,
        train_fitness=None,
        val_accuracy=None,
        test_score=mean,
        history=[],
        extra={
            "n_splits": n_splits,
            "split_size": split_size,
            "stddev": stddev,
            "split_scores": scores,
        },
        n_fitness_evals=sum(r.n_fitness_evals for r in results),
        config=config.to_dict(),
    )
    aggregate.wall_time_s = time.perf_counter() - started
    if out_root is not None:
        out_root.mkdir(parents=True, exist_ok=True)
        (out_root / "sweep.json").write_text(aggregate.canonical_json(), encoding="utf-8")
    return aggregate


def oneshot_pair_sweep(
    config: RunConfig,
    dataset: Dataset | None = None,
    first_n: int = 10,
) -> RunResult:
    """Try every one-example-per-label pair drawn from the first ``first_n``
    training examples and report best/worst test accuracy."""
    started = time.perf_counter()
    if dataset is None:
        dataset = load_run_dataset(config)
    if dataset.label_set is None:
        raise ConfigError("pair sweep needs a classification label set")
    by_label: dict[str, list[int]] = {lid: [] for lid in dataset.label_set.ids()}
    for ex in dataset.train[:first_n]:
        by_label[ex.label].append(ex.index)
    ids = dataset.label_set.ids()
    if any(not by_label[lid] for lid in ids):
        raise ConfigError(f"first {first_n} examples do not cover every label")
    if len(ids) != 2:
        raise ConfigError("pair sweep is defined for two-label tasks")
    pairs = [[a, b] for a in by_label[ids[0]] for b in by_label[ids[1]]]
    per_pair = []
    for pair in pairs:
        sub = dataclasses.replace(config, mode="oneshot", pair=pair, out_dir=None)
        result = run(sub, dataset)
        per_pair.append({"pair": pair, "test_score": result.test_score,
                         "sequence": result.best_indices})
    scored = [p for p in per_pair if p["test_score"] is not None]
    best = max(scored, key=lambda p: p["test_score"]) if scored else None
    worst = min(scored, key=lambda p: p["test_score"]) if scored else None
    aggregate = RunResult(
        mode="oneshot-pair-sweep",
        task=config.task,
        metric=_default_metric(config.task),
        best_indices=best["sequence"] if best else None,
        is_sequence=True,
        separator=None,
        train_fitness=None,
        val_accuracy=None,
        test_score=best["test_score"] if best else None,
        history=[],
        extra={"pairs": per_pair, "best": best, "worst": worst, "first_n": first_n},
        n_fitness_evals=0,
        config=config.to_dict(),
    )
    aggregate.wall_time_s = time.perf_counter() - started
    if config.out_dir:
        out_root = Path(config.out_dir)
        out_root.mkdir(parents=True, exist_ok=True)
        (out_root / "pair_sweep.json").write_text(aggregate.canonical_json(), encoding="utf-8")
    return aggregate
