"""Greedy transducer decoding, dialect prediction, and the stress test.

Decoding walks the lattice frame by frame: take the argmax of the joint
output, append non-blank tokens to the emission history (capped per
frame), advance on blank.  Under a forced-dialect protocol, every time
the model emits a dialect token, the token fed back into the prediction
network is replaced by a protocol-chosen one (the true dialect with
probability p, otherwise uniformly one of the others), while the token
recorded for accuracy scoring stays the model's own argmax.  That
separates the conditioning channel from the model's own belief.
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .dialect import adc_forward, dii_augment, majority_vote, strip_dialect_tokens
from .errors import ConfigError, ContractError
from .metrics import corpus_rate, dialect_accuracy
from .model import BLANK, _padded_context, encode

__all__ = [
    "Hypothesis",
    "DecodeOptions",
    "StressProtocol",
    "StressRow",
    "utterance_rng",
    "greedy_decode",
    "predict_dialect",
    "stress_test",
]


@dataclass(frozen=True)
class StressProtocol:
    """Forced-dialect feeding: correct with probability p, else uniformly
    one of the other dialects."""

    p: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"correctness probability must lie in [0, 1], got {self.p}")


@dataclass
class DecodeOptions:
    max_symbols_per_frame: int = 10
    dii_dialect: int | None = None
    protocol: StressProtocol | None = None
    true_dialect: int | None = None
    rng: np.random.Generator | None = None

    def __post_init__(self):
        if self.max_symbols_per_frame < 1:
            raise ConfigError("max_symbols_per_frame must be >= 1")


@dataclass
class Hypothesis:
    tokens: tuple
    frame_indices: tuple
    clean_tokens: tuple
    text: str
    votes: Counter = field(default_factory=Counter)
    predicted_dialect: int | None = None
    frames_consumed: int = 0
    substitutions: int = 0
    correct_substitutions: int = 0


def utterance_rng(seed, utterance_id):
    """Stable per-utterance random stream: global seed + id hash."""
    return np.random.default_rng([int(seed), zlib.crc32(utterance_id.encode("utf-8"))])


def _protocol_feed(protocol, rng, true_dialect, n_dialects):
    if rng.random() < protocol.p:
        return true_dialect
    others = [d for d in range(n_dialects) if d != true_dialect]
    return others[int(rng.integers(len(others)))]


def greedy_decode(model, features, task, options=None):
    """Best-path decode of one utterance for one task branch."""
    options = options or DecodeOptions()
    if task not in model.tasks:
        raise ContractError(f"model has no task {task!r}; have {sorted(model.tasks)}")
    branch = model.tasks[task]
    if options.protocol is not None:
        if branch.vocab.n_dialects == 0:
            raise ConfigError("forced-dialect protocol needs dialect tokens in the vocabulary")
        if options.true_dialect is None or options.rng is None:
            raise ContractError("forced-dialect protocol needs the true dialect and an rng")
    with ad.no_grad():
        h = encode(features, model.encoder_cfg, model.encoder)
        if model.mode.dii:
            if options.dii_dialect is None:
                raise ContractError("model prefixes a dialect embedding; set dii_dialect")
            h = dii_augment(h, options.dii_dialect, model.dii)
        h_enc = h.data
        joint = branch.joint
        a_proj = h_enc @ joint.w_enc.data
        bias = joint.bias.data
        w_out, b_out = joint.w_out.data, joint.b_out.data
        pcfg, pparams = branch.predictor_cfg, branch.predictor
        embed, w_pred_in, b_pred = pparams.embed.data, pparams.w.data, pparams.b.data
        w_pred = joint.w_pred.data
        pred_cache = {}

        def pred_proj(history):
            tail = _padded_context(history, pcfg.context_size)
            hit = pred_cache.get(tail)
            if hit is None:
                flat = embed[list(tail)].reshape(-1)
                state = np.maximum(flat @ w_pred_in + b_pred, 0.0)
                hit = state @ w_pred
                pred_cache[tail] = hit
            return hit

        t_prime = h_enc.shape[0]
        history, recorded, frame_idx = [], [], []
        n_subs = n_correct = 0
        for t in range(t_prime):
            for _ in range(options.max_symbols_per_frame):
                s = np.tanh(a_proj[t] + pred_proj(history) + bias)
                tok = int(np.argmax(s @ w_out + b_out))
                if tok == BLANK:
                    break
                recorded.append(tok)
                frame_idx.append(t)
                fed = tok
                if options.protocol is not None and branch.vocab.is_dialect_token(tok):
                    n_subs += 1
                    fed_d = _protocol_feed(
                        options.protocol, options.rng, options.true_dialect,
                        branch.vocab.n_dialects,
                    )
                    n_correct += int(fed_d == options.true_dialect)
                    fed = branch.vocab.dialect_token(fed_d)
                history.append(fed)
    clean, votes = strip_dialect_tokens(recorded, branch.vocab)
    return Hypothesis(
        tokens=tuple(recorded),
        frame_indices=tuple(frame_idx),
        clean_tokens=tuple(clean),
        text=branch.decode_tokens(clean),
        votes=votes,
        frames_consumed=t_prime,
        substitutions=n_subs,
        correct_substitutions=n_correct,
    )


def predict_dialect(model, features, source, hypothesis=None):
    """Utterance-level dialect estimate: classifier argmax or decoded-token
    majority vote; None when votes are absent or tied."""
    source = str(source).lower()
    if source == "adc":
        if model.adc is None:
            raise ConfigError("model has no dialect classifier")
        with ad.no_grad():
            h = encode(features, model.encoder_cfg, model.encoder)
            return int(np.argmax(adc_forward(h, model.adc).logits.data))
    if source == "votes":
        if hypothesis is None:
            raise ContractError("vote-based dialect prediction needs a decoded hypothesis")
        return majority_vote(hypothesis.votes)
    raise ConfigError(f"unknown dialect source {source!r}; choose adc or votes")


@dataclass(frozen=True)
class StressRow:
    p: float
    empirical_correctness: float
    cer_hanzi: float
    ser_pinyin: float
    dialect_acc: float


def stress_test(model, dataset, p_grid, seed=0, split="test", max_symbols_per_frame=10):
    """Decode the split once per correctness level p; deterministic given
    the seed (each utterance owns a derived random stream)."""
    if any(branch.vocab.n_dialects == 0 for branch in model.tasks.values()):
        raise ConfigError("stress test needs a model whose vocabulary has dialect tokens")
    utts = dataset.split(split)
    if not utts:
        raise ContractError(f"split {split!r} is empty")
    rows = []
    for p in p_grid:
        protocol = StressProtocol(p=float(p), seed=seed)
        pairs_h, pairs_p, preds, truths = [], [], [], []
        n_subs = n_correct = 0
        for utt in utts:
            votes = Counter()
            for task in sorted(model.tasks):
                options = DecodeOptions(
                    max_symbols_per_frame=max_symbols_per_frame,
                    dii_dialect=utt.dialect.index if model.mode.dii else None,
                    protocol=protocol,
                    true_dialect=utt.dialect.index,
                    rng=utterance_rng(seed, f"{utt.id}/{task}/p={float(p)!r}"),
                )
                hyp = greedy_decode(model, utt.features, task, options)
                votes.update(hyp.votes)
                n_subs += hyp.substitutions
                n_correct += hyp.correct_substitutions
                if task == "hanzi":
                    pairs_h.append((utt.transcript_h, hyp.text))
                else:
                    pairs_p.append((utt.transcript_p, hyp.text))
            preds.append(majority_vote(votes))
            truths.append(utt.dialect.index)
        rows.append(
            StressRow(
                p=float(p),
                empirical_correctness=(n_correct / n_subs) if n_subs else float("nan"),
                cer_hanzi=corpus_rate(pairs_h, "char"),
                ser_pinyin=corpus_rate(pairs_p, "syllable"),
                dialect_acc=dialect_accuracy(preds, truths),
            )
        )
    return rows
