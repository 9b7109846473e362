"""Experiment assembly: training loop, evaluation passes, speed bench.

Training is plain mini-batch descent with Adam over the combined loss.
The per-epoch dev evaluation runs on a float32-roundtripped copy of the
parameters so the logged dev metrics are exactly what a reloaded
checkpoint reproduces.
"""

from __future__ import annotations

import os
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .autodiff import Graph
from .checkpoint import load_checkpoint, save_checkpoint
from .config import system_label
from .data import read_dataset
from .decode import DecodeOptions, StressProtocol, greedy_decode, predict_dialect, utterance_rng
from .dialect import majority_vote
from .errors import ConfigError, ContractError, DataError, NumericError
from .metrics import EfficiencyReport, corpus_rate, count_params, dialect_accuracy
from .model import (
    DialectMode,
    EncoderConfig,
    PredictorConfig,
    build_model,
    model_parameters,
    multitask_forward,
)
from .optim import AdamState, adam_step

__all__ = [
    "EpochLog",
    "EvalReport",
    "build_model_from_config",
    "load_model_params",
    "train_model",
    "evaluate_model",
    "bench_rtf",
    "TASK_UNITS",
]

TASK_UNITS = {"hanzi": "char", "pinyin": "syllable"}


def build_model_from_config(cfg, dataset):
    rng = np.random.default_rng(cfg.seed)
    tables = dataset.symbol_tables()
    if cfg.task != "both":
        tables = {cfg.task: tables[cfg.task]}
    mode = DialectMode(adc=cfg.adc, dii=cfg.dii, conditioning=cfg.conditioning)
    encoder_cfg = EncoderConfig(
        input_dim=dataset.feature_dim,
        model_dim=cfg.encoder_dim,
        num_blocks=cfg.encoder_blocks,
        subsample_factor=cfg.subsample,
        hidden_dim=cfg.encoder_hidden,
    )
    predictor_cfg = PredictorConfig(
        context_size=cfg.predictor_context,
        embed_dim=cfg.embed_dim,
        output_dim=cfg.encoder_dim,
    )
    return build_model(
        rng,
        feature_dim=dataset.feature_dim,
        symbol_tables=tables,
        n_dialects=len(dataset.dialects),
        mode=mode,
        encoder_cfg=encoder_cfg,
        predictor_cfg=predictor_cfg,
        joint_dim=cfg.joint_dim,
        lam=cfg.lam,
        loss_mode=cfg.loss,
        s_range=cfg.s_range,
    )


def load_model_params(model, path):
    """Fill a freshly built model from a checkpoint; shapes must match."""
    stored = load_checkpoint(path)
    params = model_parameters(model)
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise DataError(
            f"checkpoint does not match the model (missing {missing}, unexpected {extra})"
        )
    for name, tensor in params.items():
        if tuple(stored[name].shape) != tuple(tensor.data.shape):
            raise DataError(
                f"checkpoint {name}: shape {stored[name].shape} != model {tensor.data.shape}"
            )
        tensor.data = stored[name].astype(np.float64)
    return model


@dataclass
class EpochLog:
    epoch: int
    l_asr: float
    l_adc: float | None
    dev_rates: dict
    dev_dialect_acc: float | None
    dev_score: float
    is_best: bool


def _dii_choice(cfg, model, utt, oracle):
    if not model.mode.dii:
        return None
    if oracle or cfg.infer_dialect == "truth":
        return utt.dialect.index
    if cfg.infer_dialect == "adc":
        return predict_dialect(model, utt.features, "adc")
    return int(cfg.infer_dialect)


@dataclass
class EvalReport:
    split: str
    rates: dict
    dialect_acc_adc: float | None
    dialect_acc_votes: float | None
    vote_coverage: float | None
    n_utterances: int

    @property
    def score(self):
        return sum(self.rates.values()) / len(self.rates)

    @property
    def dialect_acc(self):
        if self.dialect_acc_adc is not None:
            return self.dialect_acc_adc
        return self.dialect_acc_votes


def evaluate_model(model, cfg, dataset, split="dev", oracle_dialect=False):
    """Greedy-decode a split and report per-task error rates and dialect
    accuracy (classifier-based and/or decoded-token votes)."""
    utts = dataset.split(split)
    if not utts:
        raise ContractError(f"split {split!r} is empty")
    has_tokens = any(branch.vocab.n_dialects > 0 for branch in model.tasks.values())
    pairs = {task: [] for task in model.tasks}
    adc_preds, vote_preds, truths = [], [], []
    voted = 0
    for utt in utts:
        truths.append(utt.dialect.index)
        if model.adc is not None:
            adc_preds.append(predict_dialect(model, utt.features, "adc"))
        dii_d = _dii_choice(cfg, model, utt, oracle_dialect)
        votes = Counter()
        for task in sorted(model.tasks):
            options = DecodeOptions(
                max_symbols_per_frame=cfg.max_symbols,
                dii_dialect=dii_d,
                protocol=StressProtocol(p=1.0, seed=cfg.seed) if oracle_dialect and has_tokens else None,
                true_dialect=utt.dialect.index if oracle_dialect and has_tokens else None,
                rng=utterance_rng(cfg.seed, f"{utt.id}/{task}/p=1.0")
                if oracle_dialect and has_tokens
                else None,
            )
            hyp = greedy_decode(model, utt.features, task, options)
            votes.update(hyp.votes)
            ref = utt.transcript_h if task == "hanzi" else utt.transcript_p
            pairs[task].append((ref, hyp.text))
        if has_tokens:
            vote_preds.append(majority_vote(votes))
            voted += int(sum(votes.values()) > 0)
    rates = {task: corpus_rate(pairs[task], TASK_UNITS[task]) for task in pairs}
    return EvalReport(
        split=split,
        rates=rates,
        dialect_acc_adc=dialect_accuracy(adc_preds, truths) if adc_preds else None,
        dialect_acc_votes=dialect_accuracy(vote_preds, truths) if has_tokens else None,
        vote_coverage=(voted / len(utts)) if has_tokens else None,
        n_utterances=len(utts),
    )


def _roundtrip_f32(params):
    saved = {}
    for name, tensor in params.items():
        saved[name] = tensor.data
        tensor.data = tensor.data.astype(np.float32).astype(np.float64)
    return saved


def _restore(params, saved):
    for name, tensor in params.items():
        tensor.data = saved[name]


def train_model(cfg, dataset=None, log=print):
    """Train per the run config; returns (model, per-epoch history).

    Writes the best-dev checkpoint to ``<checkpoint_dir>/<system>.ckpt``
    and a per-epoch log CSV to ``<results_dir>/train_log_<system>.csv``.
    """
    if dataset is None:
        dataset = read_dataset(cfg.data_dir)
    train_utts = dataset.split("train")
    if not train_utts:
        raise DataError("training split is empty")
    model = build_model_from_config(cfg, dataset)
    params = model_parameters(model)
    opt = AdamState(lr=cfg.lr)
    label = system_label(cfg)
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    os.makedirs(cfg.results_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.checkpoint_dir, f"{label}.ckpt")
    history = []
    best_score = float("inf")
    n = len(train_utts)
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        asr_sum, adc_sum, seen = 0.0, 0.0, 0
        saw_adc = False
        for b0 in range(0, n, cfg.batch_size):
            batch = [train_utts[i] for i in order[b0 : b0 + cfg.batch_size]]
            with Graph() as graph:
                result = multitask_forward(batch, model)
                if not np.isfinite(result.l_final.data):
                    raise NumericError(
                        f"loss became non-finite at epoch {epoch}, "
                        f"batch {b0 // cfg.batch_size}"
                    )
                graph.backward(result.l_final)
            adam_step(params, opt)
            asr_sum += result.l_asr * len(batch)
            if result.l_adc is not None:
                adc_sum += result.l_adc * len(batch)
                saw_adc = True
            seen += len(batch)
        saved = _roundtrip_f32(params)
        report = evaluate_model(model, cfg, dataset, split="dev")
        _restore(params, saved)
        is_best = report.score < best_score - 1e-12
        if is_best:
            best_score = report.score
            save_checkpoint(params, ckpt_path)
        entry = EpochLog(
            epoch=epoch,
            l_asr=asr_sum / seen,
            l_adc=(adc_sum / seen) if saw_adc else None,
            dev_rates=dict(report.rates),
            dev_dialect_acc=report.dialect_acc,
            dev_score=report.score,
            is_best=is_best,
        )
        history.append(entry)
        if log is not None:
            rates = " ".join(f"dev_{t}={r:.2f}" for t, r in sorted(entry.dev_rates.items()))
            acc = f" dev_dialect_acc={entry.dev_dialect_acc:.2f}" if entry.dev_dialect_acc is not None else ""
            adc_part = f" l_adc={entry.l_adc:.4f}" if entry.l_adc is not None else ""
            log(
                f"epoch {epoch:3d} l_asr={entry.l_asr:.4f}{adc_part} {rates}{acc}"
                + (" *" if is_best else "")
            )
    _write_train_log(os.path.join(cfg.results_dir, f"train_log_{label}.csv"), history)
    return model, history


def _write_train_log(path, history):
    tasks = sorted(history[0].dev_rates) if history else []
    cols = ["epoch", "l_asr", "l_adc"] + [f"dev_{t}" for t in tasks] + ["dev_dialect_acc", "best"]
    lines = [",".join(cols)]
    for entry in history:
        row = [
            str(entry.epoch),
            f"{entry.l_asr:.6f}",
            "" if entry.l_adc is None else f"{entry.l_adc:.6f}",
        ]
        row += [f"{entry.dev_rates[t]:.4f}" for t in tasks]
        row.append("" if entry.dev_dialect_acc is None else f"{entry.dev_dialect_acc:.2f}")
        row.append("1" if entry.is_best else "0")
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def bench_rtf(model, cfg, dataset, split="test", runs=5, warmup=1):
    """Time greedy decoding (all task branches) over a split.

    Feature generation is excluded; one warmup pass precedes the timed
    runs; audio duration is counted once per utterance.
    """
    if runs < 1:
        raise ConfigError(f"need at least one timed run, got {runs}")
    utts = dataset.split(split)
    if not utts:
        raise ContractError(f"split {split!r} is empty")
    audio = sum(utt.audio_seconds for utt in utts)

    def one_pass():
        for utt in utts:
            dii_d = _dii_choice(cfg, model, utt, oracle=False)
            for task in sorted(model.tasks):
                greedy_decode(
                    model,
                    utt.features,
                    task,
                    DecodeOptions(max_symbols_per_frame=cfg.max_symbols, dii_dialect=dii_d),
                )

    for _ in range(warmup):
        one_pass()
    walls = []
    for _ in range(runs):
        begin = time.perf_counter()
        one_pass()
        walls.append(time.perf_counter() - begin)
    return EfficiencyReport(
        params_millions=count_params(model),
        audio_seconds=audio,
        run_wall_seconds=tuple(walls),
    )
