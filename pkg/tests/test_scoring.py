import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from promptperm.core import assemble_prompt, default_template
from promptperm.errors import ContractViolation
from promptperm.scoring import (
    ScoreDistribution,
    SeparatorEmbedding,
    ToyScorerParams,
    cross_entropy,
    kendall_tau,
    predict_top1,
)

from conftest import make_sentiment_dataset, make_toy_oracle

SIGMOID_2 = 0.8807970779778823    # 1 / (1 + e^-2)
SIGMOID_M2 = 0.11920292202211755  # 1 / (1 + e^2)
CE_OF_SIGMOID_2 = 0.12692801104297263  # -ln sigmoid(2)


# ---------------------------------------------------------------------------
# Kendall tau
# ---------------------------------------------------------------------------

@given(data=st.data())
@settings(max_examples=200, deadline=None)
def test_kendall_tau_matches_scipy(data):
    n = data.draw(st.integers(min_value=2, max_value=12))
    reference = data.draw(st.permutations(range(n)))
    k = data.draw(st.integers(min_value=2, max_value=n))
    order = data.draw(st.permutations(range(n)))[:k]
    ours = kendall_tau(order, reference)
    rank = {idx: r for r, idx in enumerate(reference)}
    expected, _ = stats.kendalltau(range(k), [rank[i] for i in order])
    assert ours == pytest.approx(expected, abs=1e-12)


def test_kendall_tau_identity_and_reverse():
    assert kendall_tau((0, 1, 2, 3), (0, 1, 2, 3)) == 1.0
    assert kendall_tau((3, 2, 1, 0), (0, 1, 2, 3)) == -1.0


def test_kendall_tau_subset_restriction():
    # only the relative order of the chosen indices matters
    assert kendall_tau((5, 9), (9, 3, 5, 0, 1, 2, 4, 6, 7, 8)) == -1.0
    assert kendall_tau((9, 5), (9, 3, 5, 0, 1, 2, 4, 6, 7, 8)) == 1.0


def test_kendall_tau_short_and_duplicates():
    assert kendall_tau((), (0, 1)) == 0.0
    assert kendall_tau((1,), (0, 1)) == 0.0
    # repeated indices: tied pairs contribute zero, denominator unchanged
    assert kendall_tau((0, 0, 1), (0, 1)) == pytest.approx(2 / 3)


def test_kendall_tau_unknown_index():
    with pytest.raises(ContractViolation):
        kendall_tau((0, 7), (0, 1, 2))


# ---------------------------------------------------------------------------
# Distributions
# ---------------------------------------------------------------------------

def test_distribution_must_sum_to_one():
    with pytest.raises(ContractViolation):
        ScoreDistribution(("a", "b"), (0.7, 0.2))


def test_cross_entropy_values():
    assert cross_entropy(ScoreDistribution(("a", "b"), (1.0, 0.0)), "a") == 0.0
    assert cross_entropy(ScoreDistribution(("a", "b"), (0.5, 0.5)), "a") == pytest.approx(
        0.6931471805599453
    )
    dist = ScoreDistribution(("a", "b"), (SIGMOID_2, 1 - SIGMOID_2))
    assert cross_entropy(dist, "a") == pytest.approx(CE_OF_SIGMOID_2)
    with pytest.raises(ContractViolation):
        cross_entropy(dist, "missing")


def test_predict_top1():
    assert predict_top1(ScoreDistribution(("true", "false"), (0.7, 0.3))) == "true"
    # uniform tie: first candidate by ordinal
    assert predict_top1(ScoreDistribution(("x", "y", "z"), (1 / 3, 1 / 3, 1 / 3))) == "x"
    vocab = ("Athens", "Berlin", "Cairo")
    assert predict_top1(ScoreDistribution(vocab, (0.1, 0.8, 0.1))) == "Berlin"


# ---------------------------------------------------------------------------
# Toy scorer
# ---------------------------------------------------------------------------

def _prompt_for(ds, tmpl, indices, query):
    return assemble_prompt(indices, query, tmpl, ds)


def test_toy_scorer_planted_fixture():
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    sigma = (0, 1, 2, 3)
    oracle = make_toy_oracle(ds, sigma_star=sigma, alpha=2.0)
    gold = ds.label_set.surface(ds.train[0].label)
    # c == sigma_star: tau = 1, z = 2, p_gold = sigmoid(2)
    dist = oracle.score(_prompt_for(ds, tmpl, sigma, ds.train[0]), ds.label_set.surfaces())
    assert dist.p(gold) == pytest.approx(SIGMOID_2, abs=1e-12)
    # reversed: tau = -1, z = -2
    dist = oracle.score(_prompt_for(ds, tmpl, sigma[::-1], ds.train[0]), ds.label_set.surfaces())
    assert dist.p(gold) == pytest.approx(SIGMOID_M2, abs=1e-12)


def test_toy_scorer_two_way_softmax_formula():
    # with binary labels the gold probability is the logistic of the logit
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(ds, alpha=1.5)
    prompt = _prompt_for(ds, tmpl, (2, 0, 3, 1), ds.train[1])
    tau = kendall_tau((2, 0, 3, 1), range(4))
    z = 1.5 * tau
    dist = oracle.score(prompt, ds.label_set.surfaces())
    gold = ds.label_set.surface(ds.train[1].label)
    assert dist.p(gold) == pytest.approx(1 / (1 + math.exp(-z)), abs=1e-12)


@given(data=st.data())
@settings(max_examples=80, deadline=None)
def test_toy_scorer_distribution_sums_to_one(data):
    ds = make_sentiment_dataset(n_train=6)
    tmpl = default_template("sentiment")
    sigma = tuple(data.draw(st.permutations(range(6))))
    alpha = data.draw(st.floats(min_value=0, max_value=50))
    oracle = make_toy_oracle(ds, sigma_star=sigma, alpha=alpha)
    k = data.draw(st.integers(min_value=0, max_value=6))
    indices = tuple(data.draw(st.permutations(range(6)))[:k])
    query = data.draw(st.sampled_from(ds.train + ds.test))
    dist = oracle.score(_prompt_for(ds, tmpl, indices, query), ds.label_set.surfaces())
    assert sum(dist.probs) == pytest.approx(1.0, abs=1e-9)


def test_toy_scorer_monotone_in_tau():
    ds = make_sentiment_dataset(n_train=5)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(ds, sigma_star=(0, 1, 2, 3, 4), alpha=3.0)
    gold = ds.label_set.surface(ds.train[0].label)
    import itertools

    seen = {}
    for perm in itertools.permutations(range(5)):
        tau = kendall_tau(perm, (0, 1, 2, 3, 4))
        p = oracle.score(_prompt_for(ds, tmpl, perm, ds.train[0]), ds.label_set.surfaces()).p(gold)
        if tau in seen:
            assert seen[tau] == pytest.approx(p, abs=1e-12)
        seen[tau] = p
    taus = sorted(seen)
    probs = [seen[t] for t in taus]
    assert all(b > a for a, b in zip(probs, probs[1:]))


def test_toy_scorer_vocab_mode():
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(ds, alpha=5.0)
    dist = oracle.score(_prompt_for(ds, tmpl, (0, 1, 2, 3), ds.train[0]), "vocab")
    assert set(dist.candidates) == {"false", "true"}
    assert predict_top1(dist) == "false"  # train[0] is negative


def test_toy_scorer_separator_term():
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    w = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    oracle = make_toy_oracle(ds, alpha=0.0, w=w)
    gold = ds.label_set.surface(ds.train[0].label)
    prompt = _prompt_for(ds, tmpl, (0, 1), ds.train[0])
    surfaces = ds.label_set.surfaces()
    # literal separator: w.s term dropped -> z = 0 -> p = 0.5
    assert oracle.score(prompt, surfaces, "\n").p(gold) == pytest.approx(0.5)
    # learned separator with s[0] = 2 -> z = 2
    sep = SeparatorEmbedding((2.0, 0, 0, 0, 0, 0, 0, 0))
    assert oracle.score(prompt, surfaces, sep).p(gold) == pytest.approx(SIGMOID_2)


def test_toy_scorer_query_bias():
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(ds, alpha=0.0, query_weights={("test", 0): 2.0})
    gold = ds.label_set.surface(ds.test[0].label)
    prompt = _prompt_for(ds, tmpl, (0, 1), ds.test[0])
    assert oracle.score(prompt, ds.label_set.surfaces()).p(gold) == pytest.approx(SIGMOID_2)


def test_sigma_star_must_be_full_permutation():
    with pytest.raises(ContractViolation):
        ToyScorerParams(sigma_star=(0, 2))


# ---------------------------------------------------------------------------
# Separator gradient
# ---------------------------------------------------------------------------

def _grad_batch(ds, tmpl, oracle, indices_list):
    surfaces = ds.label_set.surfaces()
    batch = []
    for indices, query in indices_list:
        prompt = assemble_prompt(indices, query, tmpl, ds)
        batch.append((prompt, ds.label_set.surface(query.label), surfaces))
    return batch


def test_grad_zero_when_w_zero():
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    oracle = make_toy_oracle(ds, alpha=1.0, w=None, dim=8)
    batch = _grad_batch(ds, tmpl, oracle, [((0, 1), ds.train[0])])
    loss, grad = oracle.loss_and_grad_sep(batch, SeparatorEmbedding.zeros(8))
    assert np.allclose(grad, 0.0)
    assert loss > 0


def test_grad_single_prompt_fixture():
    # p_gold = sigmoid(2) via bias, w = e1 -> grad = (p_gold - 1) * e1
    ds = make_sentiment_dataset(n_train=4)
    tmpl = default_template("sentiment")
    w = (1.0,) + (0.0,) * 7
    oracle = make_toy_oracle(ds, alpha=0.0, w=w, query_weights={("train", 0): 2.0})
    batch = _grad_batch(ds, tmpl, oracle, [((0, 1), ds.train[0])])
    loss, grad = oracle.loss_and_grad_sep(batch, SeparatorEmbedding.zeros(8))
    assert grad[0] == pytest.approx(-SIGMOID_M2, abs=1e-12)
    assert np.allclose(grad[1:], 0.0)
    assert loss == pytest.approx(CE_OF_SIGMOID_2, abs=1e-12)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(7)
    ds = make_sentiment_dataset(n_train=6)
    tmpl = default_template("sentiment")
    for _ in range(20):
        w = tuple(rng.normal(size=8))
        oracle = make_toy_oracle(ds, alpha=1.0, w=w, dim=8)
        batch = _grad_batch(
            ds, tmpl, oracle, [((0, 1, 2), ds.train[1]), ((3, 2), ds.train[4])]
        )
        s = rng.normal(scale=0.5, size=8)
        _, grad = oracle.loss_and_grad_sep(batch, SeparatorEmbedding.from_array(s))
        h = 1e-4
        fd = np.zeros(8)
        for i in range(8):
            up, down = s.copy(), s.copy()
            up[i] += h
            down[i] -= h
            lu, _ = oracle.loss_and_grad_sep(batch, SeparatorEmbedding.from_array(up))
            ld, _ = oracle.loss_and_grad_sep(batch, SeparatorEmbedding.from_array(down))
            fd[i] = (lu - ld) / (2 * h)
        assert np.linalg.norm(grad - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-12)


def test_grad_empty_batch_rejected():
    ds = make_sentiment_dataset(n_train=4)
    oracle = make_toy_oracle(ds)
    with pytest.raises(ContractViolation):
        oracle.loss_and_grad_sep([], SeparatorEmbedding.zeros(8))
