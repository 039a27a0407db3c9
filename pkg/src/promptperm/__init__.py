"""promptperm: search over orderings of few-shot prompt examples.

A genetic algorithm evolves permutations of training examples used as a
prompt for a frozen masked-LM scorer, optionally learning the embedding of
the separator token between examples.  A deterministic toy oracle with a
planted target ordering makes the whole procedure verifiable without any
language model; an HTTP client talks to a real masked-LM scoring service.
"""

from .core import (
    Dataset,
    Example,
    LabelSet,
    Permutation,
    PromptTemplate,
    PromptText,
    assemble_prompt,
    load_dataset,
    validate_permutation,
)
from .errors import (
    ConfigError,
    ContractViolation,
    DatasetError,
    PromptPermError,
    TransportError,
    UnsupportedCapability,
)
from .genetic import GaConfig, FitnessRecord, Population, run_search
from .harness import RunConfig, RunResult, evaluate, random_permutation_baseline, run, sweep
from .http_oracle import HttpScorer
from .oneshot import GrowableSequence, grow_greedy, repeat_label_pattern
from .scoring import (
    ScoreDistribution,
    SeparatorEmbedding,
    ToyScorer,
    ToyScorerParams,
    cross_entropy,
    kendall_tau,
    predict_top1,
)
from .separator import AdamW, SepTrainConfig, init_separator, train_separator

__version__ = "0.1.0"
