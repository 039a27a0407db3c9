"""Learned separator-token embedding.

Builds a masked-answer training set from the current population's prompts
and applies gradient updates through the oracle, using an adaptive-moment
optimizer with decoupled weight decay.  The underlying model weights are
never touched; only the separator vector moves.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Dataset, PromptAssembler, PromptTemplate
from .errors import ConfigError, ContractViolation, UnsupportedCapability
from .genetic import Population
from .metrics import candidates_for, gold_candidate
from .scoring import GradBatch, ScoringOracle, SeparatorEmbedding

logger = logging.getLogger(__name__)


@dataclass
class SepTrainConfig:
    """Hyperparameters for the per-epoch separator learning phase.

    ``max_epochs`` defaults to the classification setting (10); fact
    retrieval uses 5.
    """

    max_epochs: int = 10
    learning_rate: float = 1e-4
    batch_size: int = 16
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.max_epochs < 1:
            raise ConfigError("separator training needs max_epochs >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")


@dataclass
class AdamW:
    """Adaptive-moment estimation with decoupled weight decay.

    m_t = b1*m + (1-b1)*g;  v_t = b2*v + (1-b2)*g^2
    step = lr * (m_t / (1-b1^t)) / (sqrt(v_t / (1-b2^t)) + eps)
    theta <- theta - step - lr * weight_decay * theta
    """

    lr: float
    weight_decay: float
    beta1: float
    beta2: float
    eps: float
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    @classmethod
    def fresh(cls, dim: int, cfg: SepTrainConfig) -> "AdamW":
        return cls(
            lr=cfg.learning_rate,
            weight_decay=cfg.weight_decay,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            eps=cfg.eps,
            m=np.zeros(dim, dtype=np.float64),
            v=np.zeros(dim, dtype=np.float64),
        )

    def update(self, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if param.shape != self.m.shape or grad.shape != self.m.shape:
            raise ContractViolation("parameter/gradient shape mismatch with optimizer state")
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        return param - self.lr * m_hat / (np.sqrt(v_hat) + self.eps) - self.lr * self.weight_decay * param

    def state_dict(self) -> dict:
        return {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": self.m.tolist(),
            "v": self.v.tolist(),
            "step_count": self.step_count,
        }

    @classmethod
    def from_state_dict(cls, state: dict) -> "AdamW":
        return cls(
            lr=state["lr"],
            weight_decay=state["weight_decay"],
            beta1=state["beta1"],
            beta2=state["beta2"],
            eps=state["eps"],
            m=np.asarray(state["m"], dtype=np.float64),
            v=np.asarray(state["v"], dtype=np.float64),
            step_count=state["step_count"],
        )


def build_sep_training_set(
    pop: Population,
    dataset: Dataset,
    tmpl: PromptTemplate,
    assembler: PromptAssembler | None = None,
) -> GradBatch:
    """One masked-answer prompt per (individual, training example) pair.

    The query is appended as the final, masked example and dropped from the
    in-context part if the individual contains it.
    """
    if pop.size == 0:
        raise ContractViolation("population is empty")
    if assembler is None:
        assembler = PromptAssembler(dataset, tmpl)
    metric = "p_at_1" if tmpl.task == "fact-retrieval" else "accuracy"
    cand = candidates_for(metric, dataset)
    batch = []
    for c in pop.individuals:
        for ex in dataset.train:
            prompt = assembler.assemble(c, ex, drop_query=True)
            batch.append((prompt, gold_candidate(ex, dataset, metric), cand))
    return batch


def train_separator(
    s: SeparatorEmbedding,
    batch: GradBatch,
    oracle: ScoringOracle,
    opt: AdamW,
    cfg: SepTrainConfig,
    rng: random.Random,
) -> tuple[SeparatorEmbedding, list[float]]:
    """Up to ``max_epochs`` passes of minibatch updates; returns the updated
    embedding and the per-epoch mean loss trace.

    Stops early once the epoch mean loss has increased twice in a row.
    """
    if not oracle.supports_grad:
        raise UnsupportedCapability("oracle does not expose separator gradients")
    if not batch:
        raise ContractViolation("empty separator training set")
    param = s.as_array()
    trace: list[float] = []
    increases = 0
    order = list(range(len(batch)))
    for _ in range(cfg.max_epochs):
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [batch[i] for i in order[start : start + cfg.batch_size]]
            loss, grad = oracle.loss_and_grad_sep(chunk, SeparatorEmbedding.from_array(param))
            param = opt.update(param, grad)
            total += loss * len(chunk)
        mean_loss = total / len(order)
        if trace and mean_loss > trace[-1]:
            increases += 1
        else:
            increases = 0
        trace.append(mean_loss)
        if increases >= 2:
            break
    return SeparatorEmbedding.from_array(param), trace


def init_separator(oracle: ScoringOracle, init_token: str | None = None) -> SeparatorEmbedding:
    """Starting point for the learned separator.

    Remote oracles are asked for the embedding of the configured init token
    (the end-of-sequence or newline token); oracles without that endpoint,
    and the toy scorer, start from the zero vector.
    """
    fetch = getattr(oracle, "init_embedding", None)
    if fetch is not None and init_token is not None:
        values = fetch(init_token)
        if values is not None:
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != (oracle.dim,):
                raise ConfigError(
                    f"service returned init embedding of dim {arr.shape}, expected {oracle.dim}"
                )
            return SeparatorEmbedding.from_array(arr)
        logger.warning(
            "scoring service has no init-token embedding for %r; starting from zeros",
            init_token,
        )
    return SeparatorEmbedding.zeros(oracle.dim)


def save_separator(
    path: str | Path,
    s: SeparatorEmbedding,
    init_token: str | None = None,
    opt: AdamW | None = None,
) -> None:
    payload = {
        "dim": s.dim,
        "values": list(s.values),
        "init_token": init_token,
        "optimizer_state": opt.state_dict() if opt is not None else None,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_separator(path: str | Path, expected_dim: int | None = None) -> tuple[SeparatorEmbedding, AdamW | None]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    s = SeparatorEmbedding(tuple(float(v) for v in payload["values"]))
    if s.dim != payload["dim"]:
        raise ConfigError(f"stored dim {payload['dim']} does not match {s.dim} values")
    if expected_dim is not None and s.dim != expected_dim:
        raise ConfigError(f"stored separator has dim {s.dim}, oracle expects {expected_dim}")
    opt = None
    if payload.get("optimizer_state"):
        opt = AdamW.from_state_dict(payload["optimizer_state"])
    return s, opt
