"""Dialect conditioning: classifier head, input augmentation, token schemes.

Three mechanisms, composable:

* an attention-pooled classifier over encoder frames whose cross-entropy
  loss is added to the transducer loss (auxiliary multi-task objective);
* a learned per-dialect embedding prepended to the encoder output as an
  extra frame, so the joint network sees the dialect identity;
* target-side conditioning that injects a reserved dialect token into the
  label sequence (suffix ``psc``, prefix ``prsc``, or interleaved ``tic``),
  over a vocabulary extended by one token per dialect.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ShapeError

__all__ = [
    "STRATEGIES",
    "DialectId",
    "VocabularyDescriptor",
    "ADCParams",
    "ADCResult",
    "ConditionedTarget",
    "init_adc_params",
    "adc_forward",
    "adc_loss",
    "combine_losses",
    "dii_augment",
    "extend_vocab",
    "condition_targets",
    "strip_dialect_tokens",
    "majority_vote",
]

STRATEGIES = ("none", "psc", "prsc", "tic")


@dataclass(frozen=True)
class DialectId:
    """Dense dialect index with a display name."""

    index: int
    name: str

    def __post_init__(self):
        if self.index < 0:
            raise ContractError(f"dialect index must be >= 0, got {self.index}")


@dataclass(frozen=True)
class VocabularyDescriptor:
    """Base vocabulary plus one reserved token per dialect at the top."""

    v_base: int
    n_dialects: int

    @property
    def v_ext(self):
        return self.v_base + self.n_dialects

    def dialect_token(self, d):
        if not 0 <= d < self.n_dialects:
            raise IndexError(f"dialect {d} out of range for {self.n_dialects} dialects")
        return self.v_base + d

    def is_dialect_token(self, tok):
        return self.v_base <= tok < self.v_ext

    def dialect_of(self, tok):
        if not self.is_dialect_token(tok):
            raise IndexError(f"token {tok} is not a dialect token")
        return tok - self.v_base


def extend_vocab(v_base, n_dialects):
    """Reserve the top ``n_dialects`` token ids for dialect markers."""
    if v_base < 2:
        raise ConfigError(f"base vocabulary needs blank plus one symbol, got {v_base}")
    if n_dialects < 1:
        raise ConfigError(f"need at least one dialect, got {n_dialects}")
    return VocabularyDescriptor(v_base=v_base, n_dialects=n_dialects)


@dataclass
class ADCParams:
    """Attention-pooled dialect classifier over encoder frames."""

    query: Tensor
    w_key: Tensor
    w_out: Tensor

    def named(self, prefix):
        return {
            f"{prefix}.query": self.query,
            f"{prefix}.w_key": self.w_key,
            f"{prefix}.w_out": self.w_out,
        }


def init_adc_params(rng, dim, n_dialects, scale=0.1):
    return ADCParams(
        query=ad.parameter(rng.normal(0.0, scale, (dim,))),
        w_key=ad.parameter(rng.normal(0.0, scale, (dim, dim))),
        w_out=ad.parameter(rng.normal(0.0, scale, (dim, n_dialects))),
    )


@dataclass
class ADCResult:
    pooled: Tensor
    logits: Tensor
    weights: Tensor


def adc_forward(h_enc, params):
    """Pool key-projected frames with a learned query; classify the pool.

    Returns the pooled vector, the dialect logits, and the attention
    weights (a distribution over frames).
    """
    if h_enc.shape[0] < 1:
        raise ContractError("dialect classifier needs at least one encoder frame")
    dim = params.query.shape[0]
    if h_enc.shape[1] != dim:
        raise ShapeError(f"encoder dim {h_enc.shape[1]} != classifier dim {dim}")
    keys = ad.matmul(h_enc, params.w_key)
    scores = ad.reshape(ad.matmul(keys, ad.reshape(params.query, (dim, 1))), (h_enc.shape[0],))
    weights = ad.softmax(scores, axis=-1)
    pooled = ad.weighted_sum(weights, keys)
    logits = ad.reshape(ad.matmul(ad.reshape(pooled, (1, dim)), params.w_out), (params.w_out.shape[1],))
    return ADCResult(pooled=pooled, logits=logits, weights=weights)


def adc_loss(logits, d):
    """Cross-entropy (natural log) of the dialect logits against class d."""
    n = logits.shape[0]
    if not 0 <= int(d) < n:
        raise IndexError(f"dialect {d} out of range for {n} classes")
    return ad.scale(ad.pick(ad.log_softmax(logits, axis=-1), (int(d),)), -1.0)


def combine_losses(l_asr, l_a, lam=0.5):
    """Weighted sum of the transducer loss and the auxiliary dialect loss."""
    if lam < 0:
        raise ConfigError(f"loss weight must be >= 0, got {lam}")
    if isinstance(l_asr, Tensor) or isinstance(l_a, Tensor):
        if not isinstance(l_asr, Tensor):
            l_asr = Tensor(np.asarray(float(l_asr)))
        if not isinstance(l_a, Tensor):
            l_a = Tensor(np.asarray(float(l_a)))
        return ad.add(l_asr, ad.scale(l_a, float(lam)))
    return float(l_asr) + float(lam) * float(l_a)


def dii_augment(h_enc, d, embeddings):
    """Prepend the dialect embedding as frame 0; frames 1..T are untouched.

    Training feeds the ground-truth dialect (teacher forcing); inference
    feeds the classifier's argmax.
    """
    if h_enc.shape[1] != embeddings.shape[1]:
        raise ShapeError(
            f"encoder dim {h_enc.shape[1]} != embedding dim {embeddings.shape[1]}"
        )
    row = ad.embedding_lookup(embeddings, [int(d)])
    return ad.concat((row, h_enc), axis=0)


@dataclass(frozen=True)
class ConditionedTarget:
    strategy: str
    tokens: tuple


def condition_targets(y, d, strategy, vocab):
    """Inject the dialect token of ``d`` into ``y`` per the strategy.

    ``none`` leaves y alone; ``psc`` appends the token; ``prsc`` prepends
    it; ``tic`` places it after every target token.  Output lengths are
    U, U+1, U+1 and 2U respectively.
    """
    strategy = str(strategy).lower()
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown conditioning strategy {strategy!r}; choose from {STRATEGIES}")
    y = [int(tok) for tok in y]
    for tok in y:
        if vocab.is_dialect_token(tok) or not 0 <= tok < vocab.v_base:
            raise ContractError(f"target token {tok} is not a base-vocabulary symbol")
    if strategy == "none":
        tokens = tuple(y)
    else:
        d_tok = vocab.dialect_token(int(d))
        if strategy == "psc":
            tokens = tuple(y) + (d_tok,)
        elif strategy == "prsc":
            tokens = (d_tok,) + tuple(y)
        else:
            tokens = tuple(tok for pair in ((t, d_tok) for t in y) for tok in pair)
    return ConditionedTarget(strategy=strategy, tokens=tokens)


def strip_dialect_tokens(tokens, vocab):
    """Split a decoded sequence into base tokens and dialect votes.

    Inverse of ``condition_targets``: for any strategy,
    ``strip(condition(y, d, s).tokens)`` recovers y exactly with every
    vote equal to d.
    """
    clean = []
    votes = Counter()
    for tok in tokens:
        tok = int(tok)
        if vocab.is_dialect_token(tok):
            votes[vocab.dialect_of(tok)] += 1
        else:
            clean.append(tok)
    return clean, votes


def majority_vote(votes):
    """Strict majority winner among dialect votes; ties and no votes -> None."""
    if not votes:
        return None
    ranked = votes.most_common(2)
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return None
    return ranked[0][0]
