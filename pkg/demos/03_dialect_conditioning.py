"""Dialect machinery: vocabulary extension, target conditioning, the
attention-pooled classifier, and the embedding prefix.

Everything here operates on token ids and encoder frames, independent of
any trained model.
"""

import numpy as np

from rnntkit import autodiff as ad
from rnntkit.dialect import (
    adc_forward,
    adc_loss,
    condition_targets,
    dii_augment,
    extend_vocab,
    init_adc_params,
    majority_vote,
    strip_dialect_tokens,
)

STRATEGIES = ("none", "psc", "prsc", "tic")


def main():
    print("== vocabulary extension ==")
    vocab = extend_vocab(v_base=500, n_dialects=3)
    tokens = [vocab.dialect_token(d) for d in range(3)]
    print(f"base 500 + 3 dialects -> {vocab.v_ext} tokens; markers {tokens}")

    print("\n== conditioning transforms and their inverse ==")
    y, d = [7, 3, 9], 1
    small = extend_vocab(v_base=20, n_dialects=3)
    for strategy in STRATEGIES:
        conditioned = condition_targets(y, d, strategy, small)
        clean, votes = strip_dialect_tokens(conditioned.tokens, small)
        assert clean == y
        print(
            f"{strategy:5s} {list(conditioned.tokens)}  "
            f"-> strip {clean}, votes {dict(votes)}"
        )

    print("\n== majority vote over decoded dialect markers ==")
    _, votes = strip_dialect_tokens([21, 7, 21, 3, 22], small)
    print(f"votes {dict(votes)} -> winner {majority_vote(votes)}")
    _, tied = strip_dialect_tokens([21, 22], small)
    print(f"votes {dict(tied)} -> winner {majority_vote(tied)} (tie)")

    print("\n== attention-pooled dialect classifier ==")
    rng = np.random.default_rng(2)
    dim, n_dialects = 8, 3
    params = init_adc_params(rng, dim, n_dialects)
    h_enc = ad.Tensor(rng.normal(size=(6, dim)))
    result = adc_forward(h_enc, params)
    print(f"attention over frames {np.round(result.weights.data, 3)}")
    print(f"logits {np.round(result.logits.data, 3)}")
    loss = adc_loss(result.logits, d=0)
    print(f"cross-entropy vs dialect 0: {float(loss.data):.4f}")

    print("\n== embedding prefix for the joint network ==")
    embeddings = ad.parameter(rng.normal(0.0, 0.1, (n_dialects, dim)))
    augmented = dii_augment(h_enc, 2, embeddings)
    print(f"{h_enc.shape[0]} frames -> {augmented.shape[0]} rows; row 0 is the")
    print("dialect embedding, so the joint sees the dialect before any audio.")


if __name__ == "__main__":
    main()
