import pytest

from promptperm.core import Dataset, Example, LabelSet, default_template
from promptperm.scoring import ToyScorer, ToyScorerParams

LABELS = LabelSet((("negative", "false"), ("positive", "true")))


def make_sentiment_dataset(n_train=10, n_val=10, n_test=10, pos_every=2):
    """Synthetic sentiment splits; label alternates every ``pos_every``."""

    def mk(n, split):
        return tuple(
            Example(
                index=i,
                text=f"{split} snippet number {i}",
                label="positive" if i % pos_every else "negative",
                split=split,
            )
            for i in range(n)
        )

    return Dataset(
        train=mk(n_train, "train"),
        validation=mk(n_val, "validation"),
        test=mk(n_test, "test"),
        label_set=LABELS,
    )


def make_toy_oracle(dataset, sigma_star=None, alpha=4.0, dim=8, w=None, query_weights=None):
    if sigma_star is None:
        sigma_star = tuple(range(dataset.n_train))
    params = ToyScorerParams(
        sigma_star=tuple(sigma_star),
        alpha=alpha,
        dim=dim,
        w=w,
        query_weights=query_weights or {},
    )
    return ToyScorer.for_dataset(dataset, params)


@pytest.fixture
def sentiment_dataset():
    return make_sentiment_dataset()


@pytest.fixture
def sentiment_template():
    return default_template("sentiment")
