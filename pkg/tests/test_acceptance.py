"""End-to-end acceptance checks.

Each test covers one numbered criterion and prints a single PASS/FAIL
summary line with the measured quantities.  The training-based criteria
share a cache of trained systems, so the whole file runs the default
synthetic corpus experiments exactly once per (system, seed).
"""

import itertools
import math
import os
import tempfile
import time
from functools import lru_cache

import numpy as np
import pytest

from rnntkit import autodiff as ad
from rnntkit.config import RunConfig, system_label
from rnntkit.data import SynthSpec, gen_corpus, subset_by_dialect
from rnntkit.decode import stress_test
from rnntkit.dialect import condition_targets, extend_vocab, strip_dialect_tokens
from rnntkit.experiment import (
    bench_rtf,
    build_model_from_config,
    evaluate_model,
    load_model_params,
    train_model,
)
from rnntkit.metrics import corpus_rate, count_params, edit_ops
from rnntkit.model import (
    BLANK,
    DialectMode,
    EncoderConfig,
    PredictorConfig,
    build_model,
    encode,
    model_parameters,
    multitask_forward,
    task_grid,
)
from rnntkit.transducer import (
    PruneRange,
    band_from_grid,
    enumerate_alignments,
    rnnt_loss_full,
    rnnt_loss_pruned,
    rnnt_loss_tensor,
)

SEEDS = (0, 1, 2)
# Longer than the desk-scale default of 15: the conditioned systems are
# still far from converged at 15 epochs and the system ordering the
# comparisons look for has not emerged yet.
EPOCHS = 30
_WORK = tempfile.mkdtemp(prefix="rnntkit-accept-")


def announce(capsys, n, ok, detail):
    # Bypass capture so every criterion prints its line even when green.
    with capsys.disabled():
        print(f"\ncriterion {n:02d} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def random_grid(rng, t_prime, u_len, vocab):
    logits = rng.normal(size=(t_prime, u_len + 1, vocab))
    return ad.log_softmax(ad.Tensor(logits), axis=-1).data


@lru_cache(maxsize=1)
def corpus():
    return gen_corpus(SynthSpec())


@lru_cache(maxsize=None)
def trained(key, seed, task="both", adc=False, dii=False, conditioning="none",
            dialect=None, epochs=EPOCHS):
    """Train one system once; returns test/dev reports from the best
    checkpoint plus the reloaded model and its wall time."""
    full = corpus()
    train_set = subset_by_dialect(full, dialect) if dialect else full
    cfg = RunConfig(
        data_dir="unused",
        checkpoint_dir=os.path.join(_WORK, f"{key}-s{seed}", "ckpt"),
        results_dir=os.path.join(_WORK, f"{key}-s{seed}", "results"),
        epochs=epochs,
        task=task,
        adc=adc,
        dii=dii,
        conditioning=conditioning,
        seed=seed,
    ).validate()
    begin = time.monotonic()
    train_model(cfg, dataset=train_set, log=lambda *_: None)
    ckpt = os.path.join(cfg.checkpoint_dir, f"{system_label(cfg)}.ckpt")
    model = load_model_params(build_model_from_config(cfg, train_set), ckpt)
    test = evaluate_model(model, cfg, full, split="test")
    dev = evaluate_model(model, cfg, train_set, split="dev")
    wall = time.monotonic() - begin
    return {"cfg": cfg, "model": model, "test": test, "dev": dev, "wall": wall}


def test_criterion_01_exact_loss_matches_path_enumeration(capsys):
    rng = np.random.default_rng(11)
    begin = time.monotonic()
    worst = 0.0
    for _ in range(200):
        t_prime = int(rng.integers(1, 5))
        u_len = int(rng.integers(0, 4))
        vocab = int(rng.integers(2, 6))
        y = rng.integers(1, vocab, size=u_len).tolist()
        grid = random_grid(rng, t_prime, u_len, vocab)
        diff = abs(rnnt_loss_full(grid, y).loss - enumerate_alignments(grid, y))
        worst = max(worst, diff)
    elapsed = time.monotonic() - begin
    announce(
        capsys,
        1,
        worst < 1e-8 and elapsed < 10.0,
        f"200 random lattices, max |dp - enumeration| = {worst:.2e} "
        f"(< 1e-8), {elapsed:.1f}s (< 10s)",
    )


def _fd_max_rel_err(loss_fn, params, eps=1e-5):
    """Central-difference check of every component of every parameter."""
    with ad.Graph() as g:
        loss = loss_fn()
    ad.backward(g, loss)
    worst = 0.0
    with ad.no_grad():
        for name, tensor in params.items():
            analytic = tensor.grad
            assert analytic is not None, f"no gradient reached {name}"
            flat = tensor.data.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(loss_fn().data)
                flat[i] = orig - eps
                lo = float(loss_fn().data)
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                a = analytic.ravel()[i]
                worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
            tensor.grad = None
    return worst


def test_criterion_02_finite_differences_validate_the_training_gradient(capsys):
    begin = time.monotonic()
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(8, 4))
    encoder_cfg = EncoderConfig(
        input_dim=4, model_dim=8, num_blocks=1, subsample_factor=2, hidden_dim=8
    )
    predictor_cfg = PredictorConfig(context_size=2, embed_dim=4, output_dim=8)

    plain = build_model(
        np.random.default_rng(0),
        feature_dim=4,
        symbol_tables={"hanzi": ("a", "b", "c")},
        n_dialects=2,
        encoder_cfg=encoder_cfg,
        predictor_cfg=predictor_cfg,
        joint_dim=8,
    )
    branch = plain.tasks["hanzi"]
    y = [1, 3]

    def asr_loss():
        h = encode(feats, plain.encoder_cfg, plain.encoder)
        return rnnt_loss_tensor(task_grid(plain, branch, h, y), y, blank=BLANK)

    err_asr = _fd_max_rel_err(asr_loss, model_parameters(plain))

    conditioned = build_model(
        np.random.default_rng(1),
        feature_dim=4,
        symbol_tables={"hanzi": ("a", "b", "c"), "pinyin": ("da", "ge")},
        n_dialects=2,
        mode=DialectMode(adc=True, dii=True, conditioning="tic"),
        encoder_cfg=encoder_cfg,
        predictor_cfg=predictor_cfg,
        joint_dim=8,
    )

    class Utt:
        def __init__(self):
            self.features = feats
            self.dialect = corpus().dialect_id("north")
            self.transcript_h = "ab"
            self.transcript_p = "da ge"

    utt = Utt()

    def combined_loss():
        return multitask_forward([utt], conditioned).l_final

    err_full = _fd_max_rel_err(combined_loss, model_parameters(conditioned))
    elapsed = time.monotonic() - begin
    announce(
        capsys,
        2,
        err_asr < 1e-4 and err_full < 1e-4 and elapsed < 60.0,
        f"max relative gradient error {err_asr:.2e} (transducer path), "
        f"{err_full:.2e} (combined loss with classifier and embedding prefix), "
        f"{elapsed:.1f}s (< 60s)",
    )


def test_criterion_03_full_width_band_reproduces_the_exact_loss(capsys):
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(100):
        t_prime = int(rng.integers(1, 8))
        u_len = int(rng.integers(0, 7))
        vocab = int(rng.integers(2, 9))
        y = rng.integers(1, vocab, size=u_len).tolist()
        grid = random_grid(rng, t_prime, u_len, vocab)
        band = PruneRange(np.zeros(t_prime, dtype=np.int64), u_len + 1)
        pruned = rnnt_loss_pruned(band_from_grid(grid), band, y).loss
        worst = max(worst, abs(pruned - rnnt_loss_full(grid, y).loss))
    announce(
        capsys,
        3,
        worst < 1e-6,
        f"100 random cases, max |pruned(full width) - full| = {worst:.2e} (< 1e-6)",
    )


def test_criterion_04_conditioning_round_trips_and_vocab_arithmetic(capsys):
    rng = np.random.default_rng(23)
    strategies = ("none", "psc", "prsc", "tic")
    ok = True
    for _ in range(1000):
        v_base = int(rng.integers(2, 40))
        k = int(rng.integers(1, 5))
        vocab = extend_vocab(v_base, k)
        u_len = int(rng.integers(0, 7))
        y = rng.integers(1, v_base, size=u_len).tolist()
        d = int(rng.integers(k))
        strategy = strategies[int(rng.integers(4))]
        out = condition_targets(y, d, strategy, vocab)
        clean, votes = strip_dialect_tokens(out.tokens, vocab)
        ok = ok and clean == y
        ok = ok and (set(votes) <= {d})
    wide = extend_vocab(500, 3)
    tokens = [wide.dialect_token(d) for d in range(3)]
    ok = ok and wide.v_ext == 503 and tokens == [500, 501, 502]
    announce(
        capsys,
        4,
        ok,
        "strip(condition(y)) == y on 1000 random triples; "
        f"500 + 3 dialects -> {wide.v_ext} with markers {tokens}",
    )


def _exhaustive_distance(a, b):
    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        best = go(i + 1, j + 1) + (a[i] != b[j])
        return min(best, go(i + 1, j) + 1, go(i, j + 1) + 1)

    return go(0, 0)


def test_criterion_05_edit_distance_oracle_and_hand_rates(capsys):
    alphabet = "abc"
    seqs = [
        "".join(chars)
        for n in range(6)
        for chars in itertools.product(alphabet, repeat=n)
    ]
    mismatches = sum(
        1
        for a in seqs
        for b in seqs
        if edit_ops(list(a), list(b)).distance != _exhaustive_distance(a, b)
    )
    cer = corpus_rate([("abcd", "abxd")], "char")
    ser = corpus_rate([("gi11 fad2 kien31 le24", "gi11 fad2 kien31")], "syllable")
    sub_ops = edit_ops(list("abcd"), list("abxd"))
    del_ops = edit_ops("gi11 fad2 kien31 le24".split(), "gi11 fad2 kien31".split())
    ok = (
        mismatches == 0
        and cer == 25.0
        and ser == 25.0
        and (sub_ops.s, sub_ops.d, sub_ops.i) == (1, 0, 0)
        and (del_ops.s, del_ops.d, del_ops.i) == (0, 1, 0)
    )
    announce(
        capsys,
        5,
        ok,
        f"{len(seqs) ** 2} pairs match the exhaustive oracle "
        f"({mismatches} mismatches); hand cases CER {cer}%, SER {ser}%",
    )


def test_criterion_06_mixed_dialect_training_beats_single_dialect_training(capsys):
    begin = time.monotonic()
    wins = 0
    lines = []
    for seed in SEEDS:
        mix = trained("van_h", seed, task="hanzi")["test"].rates["hanzi"]
        singles = {
            d: trained(f"van_h@{d}", seed, task="hanzi", dialect=d)["test"].rates["hanzi"]
            for d in corpus().dialects
        }
        wins += int(all(mix < cer for cer in singles.values()))
        lines.append(
            f"seed {seed}: mix {mix:.2f} vs "
            + " ".join(f"{d} {cer:.2f}" for d, cer in singles.items())
        )
    elapsed = time.monotonic() - begin
    announce(
        capsys,
        6,
        wins >= 2 and elapsed < 15 * 60,
        f"mixed-training CER lowest in {wins}/3 seeds ({'; '.join(lines)}), "
        f"{elapsed / 60:.1f} min (< 15 min)",
    )


def test_criterion_07_system_comparison_reproduces_the_expected_ordering(capsys):
    begin = time.monotonic()
    a_wins = b_wins = 0
    adc_accs = []
    for seed in SEEDS:
        van_h = trained("van_h", seed, task="hanzi")["test"].rates["hanzi"]
        van_p = trained("van_p", seed, task="pinyin")["test"].rates["pinyin"]
        mtl = trained("mtl", seed)["test"].rates
        psc = trained("mtl_psc", seed, conditioning="psc")["test"].rates
        tic = trained("mtl_tic", seed, conditioning="tic")["test"].rates
        best = trained("full", seed, adc=True, dii=True, conditioning="tic")
        full = best["test"].rates
        a_wins += int(mtl["hanzi"] <= van_h)
        cer_rivals = (van_h, mtl["hanzi"], psc["hanzi"], tic["hanzi"])
        ser_rivals = (van_p, mtl["pinyin"], psc["pinyin"], tic["pinyin"])
        b_wins += int(
            all(full["hanzi"] <= r for r in cer_rivals)
            and all(full["pinyin"] <= r for r in ser_rivals)
        )
        adc_accs.append(best["dev"].dialect_acc_adc)
    elapsed = time.monotonic() - begin
    ok = a_wins >= 2 and b_wins >= 2 and min(adc_accs) >= 95.0 and elapsed < 45 * 60
    announce(
        capsys,
        7,
        ok,
        f"(a) multi-task <= single-task hanzi CER in {a_wins}/3 seeds; "
        f"(b) conditioned system lowest CER and SER in {b_wins}/3 seeds; "
        f"(c) classifier dev accuracy {[f'{a:.2f}' for a in adc_accs]} (>= 95); "
        f"{elapsed / 60:.1f} min (< 45 min)",
    )


def test_criterion_08_correct_dialect_feed_helps_and_matches_oracle_eval(capsys):
    best = trained("full", 0, adc=True, dii=True, conditioning="tic")
    model, cfg = best["model"], best["cfg"]
    lo, hi = stress_test(
        model, corpus(), [0.0, 1.0], seed=cfg.seed,
        max_symbols_per_frame=cfg.max_symbols,
    )
    oracle = evaluate_model(model, cfg, corpus(), split="test", oracle_dialect=True)
    trend = hi.cer_hanzi <= lo.cer_hanzi and hi.ser_pinyin <= lo.ser_pinyin
    exact = (
        hi.cer_hanzi == oracle.rates["hanzi"]
        and hi.ser_pinyin == oracle.rates["pinyin"]
        and hi.dialect_acc == oracle.dialect_acc_votes
    )
    announce(
        capsys,
        8,
        trend and exact,
        f"p=1.0 CER/SER {hi.cer_hanzi:.2f}/{hi.ser_pinyin:.2f} <= "
        f"p=0.0 {lo.cer_hanzi:.2f}/{lo.ser_pinyin:.2f}; "
        f"p=1.0 row equals the ground-truth-fed evaluation bit-exactly: {exact}",
    )


def test_criterion_09_decode_benchmark_and_exact_parameter_count(capsys):
    best = trained("mtl", 0)
    report = bench_rtf(best["model"], best["cfg"], corpus(), split="test", runs=5)
    runs = report.run_rtfx()
    mean = report.rtfx
    spread = max(abs(r - mean) / mean for r in runs)

    micro = build_model(
        np.random.default_rng(3),
        feature_dim=4,
        symbol_tables={"hanzi": ("a", "b", "c", "d", "e")},
        n_dialects=2,
        encoder_cfg=EncoderConfig(
            input_dim=4, model_dim=8, num_blocks=1, subsample_factor=2, hidden_dim=16
        ),
        predictor_cfg=PredictorConfig(context_size=2, embed_dim=4, output_dim=8),
        joint_dim=8,
    )
    # Hand count for the micro model. Encoder: stacked input 4*2 -> 8
    # projection plus bias; one block with two layer norms, four 8x8
    # attention maps, and an 8->16->8 feed-forward with biases; final
    # layer norm. Predictor: 6-token embedding at width 4, context 2.
    # Joint: two 8x8 input maps, hidden bias, 8x6 output with bias.
    encoder = (8 * 8 + 8) + (8 + 8 + 4 * 8 * 8 + 8 + 8 + 8 * 16 + 16 + 16 * 8 + 8) + (8 + 8)
    predictor = 6 * 4 + (2 * 4) * 8 + 8
    joint = 8 * 8 + 8 * 8 + 8 + 8 * 6 + 6
    hand = encoder + predictor + joint
    counted = round(count_params(micro) * 1e6)
    ok = (
        len(runs) == 5
        and all(r > 0 for r in runs)
        and spread <= 0.20
        and counted == hand
    )
    announce(
        capsys,
        9,
        ok,
        f"5 timed runs, mean RTFx {mean:.1f}, per-run spread {spread * 100:.1f}% "
        f"(<= 20%); parameter count {counted} == hand count {hand}",
    )


def test_criterion_10_same_seed_runs_are_identical(capsys):
    spec = SynthSpec(
        n_dialects=2,
        n_phonemes=8,
        n_words=10,
        n_tones=3,
        speakers_per_dialect=(2, 1, 1),
        utterances_per_speaker=4,
        words_per_utterance=(2, 3),
        feature_dim=6,
        frames_per_phoneme=(1, 2),
        seed=7,
    )
    first, second = gen_corpus(spec), gen_corpus(spec)
    data_identical = all(
        a.id == b.id
        and a.transcript_h == b.transcript_h
        and a.transcript_p == b.transcript_p
        and np.array_equal(a.features, b.features)
        for name in first.splits
        for a, b in zip(first.split(name), second.split(name), strict=True)
    )

    def run(tag):
        cfg = RunConfig(
            data_dir="unused",
            checkpoint_dir=os.path.join(_WORK, tag, "ckpt"),
            results_dir=os.path.join(_WORK, tag, "results"),
            encoder_dim=8,
            encoder_hidden=16,
            subsample=2,
            embed_dim=8,
            joint_dim=8,
            epochs=3,
            s_range=3,
            seed=9,
        ).validate()
        _, history = train_model(cfg, dataset=first, log=lambda *_: None)
        return [(h.l_asr, h.dev_score) for h in history]

    curve_a, curve_b = run("det-a"), run("det-b")
    curves_close = all(
        math.isclose(x[0], y[0], abs_tol=1e-6) and math.isclose(x[1], y[1], abs_tol=1e-6)
        for x, y in zip(curve_a, curve_b, strict=True)
    )
    announce(
        capsys,
        10,
        data_identical and curves_close,
        f"regenerated corpus bit-identical: {data_identical}; "
        f"repeated training curves equal within 1e-6: {curves_close}",
    )
