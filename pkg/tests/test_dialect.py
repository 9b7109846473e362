"""Dialect classifier, input augmentation, and target token schemes."""

import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnntkit import autodiff as ad
from rnntkit.autodiff import Graph, Tensor
from rnntkit.dialect import (
    STRATEGIES,
    ADCParams,
    DialectId,
    VocabularyDescriptor,
    adc_forward,
    adc_loss,
    combine_losses,
    condition_targets,
    dii_augment,
    extend_vocab,
    init_adc_params,
    majority_vote,
    strip_dialect_tokens,
)
from rnntkit.errors import ConfigError, ContractError, ShapeError


def make_params(rng, dim=4, k=3):
    return init_adc_params(rng, dim, k)


class TestClassifierForward:
    def test_single_frame_pool_is_projected_frame(self):
        rng = np.random.default_rng(0)
        params = make_params(rng)
        h = Tensor(rng.normal(size=(1, 4)))
        result = adc_forward(h, params)
        np.testing.assert_allclose(result.pooled.data, (h.data @ params.w_key.data)[0],
                                   atol=1e-12)
        np.testing.assert_allclose(result.weights.data, [1.0], atol=1e-15)

    def test_identical_frames_ignore_query(self):
        rng = np.random.default_rng(1)
        params_a = make_params(rng)
        params_b = ADCParams(query=ad.parameter(rng.normal(size=4)),
                             w_key=params_a.w_key, w_out=params_a.w_out)
        h = Tensor(np.tile(rng.normal(size=(1, 4)), (5, 1)))
        np.testing.assert_allclose(adc_forward(h, params_a).logits.data,
                                   adc_forward(h, params_b).logits.data, atol=1e-12)

    def test_weights_are_a_distribution(self):
        rng = np.random.default_rng(2)
        params = make_params(rng)
        for t in (1, 2, 7):
            w = adc_forward(Tensor(rng.normal(size=(t, 4))), params).weights.data
            assert w.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(w >= 0.0)

    def test_empty_input_rejected(self):
        params = make_params(np.random.default_rng(3))
        with pytest.raises(ContractError, match="at least one"):
            adc_forward(Tensor(np.zeros((0, 4))), params)

    def test_dim_mismatch_rejected(self):
        params = make_params(np.random.default_rng(4))
        with pytest.raises(ShapeError, match="dim"):
            adc_forward(Tensor(np.zeros((2, 5))), params)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        params = make_params(rng)
        h = rng.normal(size=(4, 4))
        original = params.query

        def f(probe):
            params.query = probe
            try:
                return adc_loss(adc_forward(Tensor(h), params).logits, 1)
            finally:
                params.query = original

        assert ad.grad_check(f, Tensor(original.data.copy()), eps=1e-6) < 1e-6


class TestClassifierLoss:
    def test_uniform_logits(self):
        for d in range(3):
            loss = adc_loss(Tensor(np.zeros(3)), d)
            assert loss.item() == pytest.approx(math.log(3.0), abs=1e-12)

    def test_saturated_logits(self):
        z = np.zeros(3)
        z[1] = 20.0
        assert adc_loss(Tensor(z), 1).item() < 1e-8

    def test_two_class_closed_form(self):
        loss = adc_loss(Tensor(np.array([1.0, 0.0])), 0)
        expected = -math.log(math.e / (math.e + 1.0))
        assert loss.item() == pytest.approx(expected, abs=1e-12)
        assert loss.item() == pytest.approx(0.3133, abs=5e-5)

    def test_out_of_range_class(self):
        with pytest.raises(IndexError, match="out of range"):
            adc_loss(Tensor(np.zeros(3)), 3)


class TestCombineLosses:
    @pytest.mark.parametrize("l_asr,l_a,lam,expected", [
        (2.0, 1.0, 0.5, 2.5),
        (3.7, 9.9, 0.0, 3.7),
        (0.0, 4.2, 1.0, 4.2),
    ])
    def test_closed_forms(self, l_asr, l_a, lam, expected):
        assert combine_losses(l_asr, l_a, lam) == pytest.approx(expected, abs=1e-12)

    def test_negative_weight_rejected(self):
        with pytest.raises(ConfigError, match=">= 0"):
            combine_losses(1.0, 1.0, -0.1)

    def test_linear_in_both_arguments(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            a, b, c, d = rng.normal(size=4)
            lam = float(rng.uniform(0.0, 2.0))
            left = combine_losses(a + c, b + d, lam)
            right = combine_losses(a, b, lam) + combine_losses(c, d, lam)
            assert left == pytest.approx(right, abs=1e-9)

    def test_tensor_arguments_stay_differentiable(self):
        x = Tensor(np.asarray(2.0), requires_grad=True)
        y = Tensor(np.asarray(1.0), requires_grad=True)
        with Graph() as g:
            total = combine_losses(x, y, 0.5)
        g.backward(total)
        assert total.item() == pytest.approx(2.5)
        assert x.grad == pytest.approx(1.0)
        assert y.grad == pytest.approx(0.5)


class TestDialectPrefix:
    def test_prefix_row_and_shape(self):
        rng = np.random.default_rng(7)
        table = Tensor(rng.normal(size=(3, 8)))
        h = Tensor(rng.normal(size=(5, 8)))
        out = dii_augment(h, 2, table)
        assert out.shape == (6, 8)
        np.testing.assert_array_equal(out.data[0], table.data[2])
        np.testing.assert_array_equal(out.data[1:], h.data)

    def test_two_dialects_differ_only_in_prefix(self):
        rng = np.random.default_rng(8)
        table = Tensor(rng.normal(size=(3, 4)))
        h = Tensor(rng.normal(size=(4, 4)))
        a = dii_augment(h, 0, table).data
        b = dii_augment(h, 1, table).data
        assert not np.array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1:], b[1:])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(ShapeError, match="dim"):
            dii_augment(Tensor(np.zeros((2, 5))), 0, Tensor(np.zeros((3, 4))))

    def test_unknown_dialect_rejected(self):
        with pytest.raises(IndexError):
            dii_augment(Tensor(np.zeros((2, 4))), 7, Tensor(np.zeros((3, 4))))


class TestVocabulary:
    def test_paper_sized_extension(self):
        vocab = extend_vocab(500, 3)
        assert vocab.v_ext == 503
        assert [vocab.dialect_token(d) for d in range(3)] == [500, 501, 502]

    def test_small_extension(self):
        vocab = extend_vocab(2, 2)
        assert vocab.v_ext == 4
        assert [vocab.dialect_token(d) for d in range(2)] == [2, 3]
        assert vocab.is_dialect_token(2) and vocab.is_dialect_token(3)
        assert not vocab.is_dialect_token(1) and not vocab.is_dialect_token(4)

    def test_guards(self):
        with pytest.raises(ConfigError, match="blank"):
            extend_vocab(1, 3)
        with pytest.raises(ConfigError, match="dialect"):
            extend_vocab(5, 0)
        with pytest.raises(IndexError):
            extend_vocab(5, 2).dialect_token(2)
        with pytest.raises(IndexError):
            extend_vocab(5, 2).dialect_of(4)

    def test_dialect_id_guard(self):
        with pytest.raises(ContractError, match=">= 0"):
            DialectId(index=-1, name="x")


class TestConditioning:
    VOCAB = VocabularyDescriptor(v_base=500, n_dialects=3)

    def test_interleaved(self):
        out = condition_targets([7, 3], 1, "tic", self.VOCAB)
        assert out.tokens == (7, 501, 3, 501)

    def test_prefix_and_suffix(self):
        assert condition_targets([7, 3], 1, "prsc", self.VOCAB).tokens == (501, 7, 3)
        assert condition_targets([7, 3], 1, "psc", self.VOCAB).tokens == (7, 3, 501)
        assert condition_targets([7, 3], 1, "none", self.VOCAB).tokens == (7, 3)

    def test_empty_targets(self):
        assert condition_targets([], 1, "psc", self.VOCAB).tokens == (501,)
        assert condition_targets([], 1, "prsc", self.VOCAB).tokens == (501,)
        assert condition_targets([], 1, "tic", self.VOCAB).tokens == ()

    @pytest.mark.parametrize("strategy,length", [
        ("none", 4), ("psc", 5), ("prsc", 5), ("tic", 8),
    ])
    def test_lengths(self, strategy, length):
        out = condition_targets([1, 2, 3, 4], 2, strategy, self.VOCAB)
        assert len(out.tokens) == length

    def test_already_conditioned_rejected(self):
        with pytest.raises(ContractError, match="base-vocabulary"):
            condition_targets([7, 501], 1, "psc", self.VOCAB)

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ConfigError, match="strategy"):
            condition_targets([7], 1, "suffix", self.VOCAB)

    def test_strip_examples(self):
        clean, votes = strip_dialect_tokens([7, 501, 3, 501], self.VOCAB)
        assert clean == [7, 3]
        assert votes == Counter({1: 2})
        clean, votes = strip_dialect_tokens([501, 7, 3], self.VOCAB)
        assert clean == [7, 3]
        assert votes == Counter({1: 1})

    @given(
        y=st.lists(st.integers(min_value=1, max_value=499), max_size=12),
        d=st.integers(min_value=0, max_value=2),
        strategy=st.sampled_from(STRATEGIES),
    )
    @settings(max_examples=200, deadline=None)
    def test_round_trip_recovers_targets(self, y, d, strategy):
        vocab = self.VOCAB
        conditioned = condition_targets(y, d, strategy, vocab)
        clean, votes = strip_dialect_tokens(conditioned.tokens, vocab)
        assert clean == y
        assert set(votes) <= {d}
        if strategy == "none":
            assert not votes
        elif strategy == "tic":
            assert votes[d] == len(y)
        else:
            assert votes[d] == 1


class TestMajorityVote:
    def test_strict_majority_wins(self):
        assert majority_vote(Counter({2: 3, 0: 1})) == 2
        assert majority_vote(Counter({1: 1})) == 1

    def test_tie_and_empty_are_incorrect(self):
        assert majority_vote(Counter({0: 2, 1: 2})) is None
        assert majority_vote(Counter()) is None
