import itertools
import math

import pytest

from promptperm.core import PromptAssembler, default_template
from promptperm.errors import ContractViolation
from promptperm.metrics import candidates_for, gold_candidate
from promptperm.oneshot import (
    GrowableSequence,
    expand,
    grow_greedy,
    make_pool,
    min_ce_fitness,
    parse_label_pattern,
    repeat_label_pattern,
)
from promptperm.scoring import ScoreDistribution, cross_entropy

from conftest import make_sentiment_dataset, make_toy_oracle

LN9 = math.log(9.0)        # sigmoid(ln 9) = 0.9
LN1_5 = math.log(1.5)      # sigmoid(ln 1.5) = 0.6
MAX_CE_09_06 = 0.5108256237659907  # -ln 0.6


def _pool(ds):
    return make_pool(ds, [0, 1])  # train[0] negative, train[1] positive


# ---------------------------------------------------------------------------
# expand
# ---------------------------------------------------------------------------

def test_expand_counts_prefilter():
    ds = make_sentiment_dataset(n_train=4)
    pool = _pool(ds)
    for l_c in range(0, 4):
        seq = GrowableSequence(tuple([0, 1] * 2)[:l_c], l_max=10)
        unfiltered = expand(seq, pool, ds, balance="none")
        assert len(unfiltered) == (l_c + 1) * 2


def test_expand_respects_l_max():
    ds = make_sentiment_dataset(n_train=4)
    seq = GrowableSequence((0, 1), l_max=2)
    with pytest.raises(ContractViolation):
        expand(seq, _pool(ds), ds)


def test_expand_balance_filter():
    ds = make_sentiment_dataset(n_train=4)
    pool = _pool(ds)
    # (0, 0) is negative twice; only positive insertions keep the gap <= 1
    seq = GrowableSequence((0, 0), l_max=10)
    balanced = expand(seq, pool, ds, balance="balanced")
    assert all(c.indices.count(1) == 1 for c in balanced)
    assert len(balanced) == 3  # three insertion positions for the positive example


def test_expand_alternating_filter():
    ds = make_sentiment_dataset(n_train=4)
    pool = _pool(ds)
    seq = GrowableSequence((0, 1), l_max=10)
    alternating = expand(seq, pool, ds, balance="alternating")
    assert [c.indices for c in alternating] == [(1, 0, 1), (0, 1, 0)]


def test_growable_sequence_cap():
    with pytest.raises(ContractViolation):
        GrowableSequence((0, 1, 0), l_max=2)


# ---------------------------------------------------------------------------
# min_ce_fitness
# ---------------------------------------------------------------------------

class PerfectOracle:
    def __init__(self, dataset):
        self.dataset = dataset
        self.dim = 4
        self.supports_grad = False
        self.vocab = dataset.label_set.surfaces()

    def score(self, prompt, candidates, sep=None):
        ex = self.dataset.split(prompt.meta.query_split)[prompt.meta.query_index]
        gold = self.dataset.label_set.surface(ex.label)
        cand = tuple(candidates) if candidates != "vocab" else self.vocab
        return ScoreDistribution(cand, tuple(1.0 if c == gold else 0.0 for c in cand))

    def score_many(self, prompts, candidates, sep=None):
        return [self.score(p, candidates, sep) for p in prompts]


def test_min_ce_perfect_oracle_zero():
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    assert min_ce_fitness((0, 1), _pool(ds), ds, tmpl, PerfectOracle(ds)) == 0.0


def test_min_ce_takes_worst_query():
    # p(gold) = 0.9 for the negative query, 0.6 for the positive one
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(
        ds, alpha=0.0, query_weights={("train", 0): LN9, ("train", 1): LN1_5}
    )
    value = min_ce_fitness((0, 1), _pool(ds), ds, tmpl, oracle)
    assert value == pytest.approx(MAX_CE_09_06, abs=1e-12)


def test_min_ce_lower_bound_from_coin_flip_query():
    # one query stuck at p = 0.5 bounds the worst case below by ln 2
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(ds, alpha=0.0, query_weights={("train", 0): 3.0})
    value = min_ce_fitness((0, 1), _pool(ds), ds, tmpl, oracle)
    assert value >= math.log(2.0) - 1e-12


# ---------------------------------------------------------------------------
# grow_greedy vs brute force
# ---------------------------------------------------------------------------

def _reference_step(seq, pool, ds, tmpl, oracle, balance):
    """Independent enumeration of one greedy step."""
    assembler = PromptAssembler(ds, tmpl)
    cand_set = candidates_for("accuracy", ds)
    pool_labels = list(pool)
    best = None
    best_fit = None
    for position in range(len(seq) + 1):
        for lid in pool_labels:
            idx = pool[lid].index
            cand = seq[:position] + (idx,) + seq[position:]
            labels = [ds.train[i].label for i in cand]
            counts = [labels.count(l) for l in pool_labels]
            if balance == "balanced" and max(counts) - min(counts) > 1:
                continue
            worst = max(
                cross_entropy(
                    oracle.score(assembler.assemble(cand, ex), cand_set),
                    gold_candidate(ex, ds, "accuracy"),
                )
                for ex in pool.values()
            )
            if best_fit is None or worst < best_fit:
                best, best_fit = cand, worst
    return best, best_fit


def test_grow_greedy_matches_brute_force_each_step():
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(
        ds,
        sigma_star=(2, 0, 3, 1),
        alpha=1.7,
        query_weights={("train", 0): 0.3, ("train", 1): -0.2},
    )
    pool = _pool(ds)
    seq, trace = grow_greedy(pool, ds, tmpl, oracle, l_max=5)
    ref = ()
    for step in trace:
        ref, ref_fit = _reference_step(ref, pool, ds, tmpl, oracle, "balanced")
        assert tuple(step["indices"]) == ref
        assert step["fitness"] == pytest.approx(ref_fit, abs=1e-12)


def test_grow_greedy_lmax_one_is_best_of_two():
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(ds, alpha=0.0, query_weights={("train", 0): 0.5})
    pool = _pool(ds)
    seq, trace = grow_greedy(pool, ds, tmpl, oracle, l_max=1)
    options = {}
    for idx in (0, 1):
        options[(idx,)] = min_ce_fitness((idx,), pool, ds, tmpl, oracle)
    assert min_ce_fitness(seq.indices, pool, ds, tmpl, oracle) == min(options.values())


def test_grow_greedy_deterministic():
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(ds, alpha=2.0)
    a, _ = grow_greedy(_pool(ds), ds, tmpl, oracle, l_max=6)
    b, _ = grow_greedy(_pool(ds), ds, tmpl, oracle, l_max=6)
    assert a == b


# ---------------------------------------------------------------------------
# Label patterns
# ---------------------------------------------------------------------------

def test_repeat_label_pattern_simple():
    ds = make_sentiment_dataset(n_train=4)
    pool = _pool(ds)
    assert repeat_label_pattern(["negative", "positive"], pool) == (0, 1)


def test_repeat_label_pattern_table_shape():
    ds = make_sentiment_dataset(n_train=4)
    pool = _pool(ds)
    pattern = parse_label_pattern("----++++--", pool)
    seq = repeat_label_pattern(pattern, pool)
    assert len(seq) == 10
    assert [i for i, idx in enumerate(seq) if idx == 0] == [0, 1, 2, 3, 8, 9]
    assert [i for i, idx in enumerate(seq) if idx == 1] == [4, 5, 6, 7]


def test_repeat_label_pattern_missing_label():
    ds = make_sentiment_dataset(n_train=4)
    pool = _pool(ds)
    with pytest.raises(ContractViolation):
        repeat_label_pattern(["neutral"], pool)


def test_parse_label_pattern_rejects_unknown_char():
    ds = make_sentiment_dataset(n_train=4)
    with pytest.raises(ContractViolation):
        parse_label_pattern("-+x", _pool(ds))


def test_pattern_multiset_matches():
    ds = make_sentiment_dataset(n_train=4)
    pool = _pool(ds)
    for pattern in itertools.product("-+", repeat=5):
        labels = parse_label_pattern("".join(pattern), pool)
        seq = repeat_label_pattern(labels, pool)
        assert len(seq) == 5
        assert seq.count(0) == pattern.count("-")
        assert seq.count(1) == pattern.count("+")


def test_make_pool_rejects_duplicate_labels():
    ds = make_sentiment_dataset(n_train=4)
    with pytest.raises(ContractViolation):
        make_pool(ds, [0, 2])  # both negative
