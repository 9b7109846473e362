"""Shared encoder, stateless predictors, and the multi-task transducer.

One encoder feeds two task branches (``hanzi``: logographic symbols scored
by CER, ``pinyin``: phonetic syllables scored by SER).  Each branch owns a
stateless prediction network conditioned on the last 1 or 2 tokens, a
joint network, and a vocabulary.  The combined objective is the unweighted
sum of the two transducer losses, averaged over the batch, optionally plus
a weighted dialect-classifier loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import dialect as dl
from . import transducer as td
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DataError, ShapeError

__all__ = [
    "EncoderConfig",
    "EncoderParams",
    "PredictorConfig",
    "PredictorParams",
    "DialectMode",
    "TaskBranch",
    "MultiTaskModel",
    "ForwardResult",
    "BLANK",
    "TASKS",
    "init_encoder_params",
    "init_predictor_params",
    "encode",
    "predict",
    "predict_rows",
    "histories_for",
    "task_grid",
    "task_loss_tensor",
    "multitask_forward",
    "build_model",
    "model_parameters",
]

BLANK = 0
TASKS = ("hanzi", "pinyin")


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    model_dim: int = 16
    num_blocks: int = 2
    subsample_factor: int = 4
    hidden_dim: int = 32

    def __post_init__(self):
        if self.subsample_factor < 1:
            raise ConfigError(f"subsample factor must be >= 1, got {self.subsample_factor}")
        if min(self.input_dim, self.model_dim, self.num_blocks, self.hidden_dim) < 1:
            raise ConfigError("encoder dimensions must all be >= 1")


@dataclass(frozen=True)
class PredictorConfig:
    context_size: int = 2
    embed_dim: int = 16
    output_dim: int = 16

    def __post_init__(self):
        if self.context_size not in (1, 2):
            raise ConfigError(f"predictor context size must be 1 or 2, got {self.context_size}")


@dataclass(frozen=True)
class DialectMode:
    """Which dialect mechanisms are active."""

    adc: bool = False
    dii: bool = False
    conditioning: str = "none"

    def __post_init__(self):
        if self.conditioning not in dl.STRATEGIES:
            raise ConfigError(
                f"unknown conditioning {self.conditioning!r}; choose from {dl.STRATEGIES}"
            )

    @property
    def extends_vocab(self):
        return self.conditioning != "none" or (self.dii and self.adc)


@dataclass
class EncoderBlockParams:
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


_BLOCK_FIELDS = ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo",
                 "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")


@dataclass
class EncoderParams:
    w_in: Tensor
    b_in: Tensor
    blocks: list
    ln_g: Tensor
    ln_b: Tensor

    def named(self, prefix="enc"):
        out = {f"{prefix}.w_in": self.w_in, f"{prefix}.b_in": self.b_in}
        for i, blk in enumerate(self.blocks):
            for fname in _BLOCK_FIELDS:
                out[f"{prefix}.block{i}.{fname}"] = getattr(blk, fname)
        out[f"{prefix}.ln_g"] = self.ln_g
        out[f"{prefix}.ln_b"] = self.ln_b
        return out


@dataclass
class PredictorParams:
    embed: Tensor
    w: Tensor
    b: Tensor

    def named(self, prefix):
        return {f"{prefix}.embed": self.embed, f"{prefix}.w": self.w, f"{prefix}.b": self.b}


def init_encoder_params(rng, cfg, scale=0.1):
    stacked = cfg.input_dim * cfg.subsample_factor
    blocks = []
    for _ in range(cfg.num_blocks):
        blocks.append(
            EncoderBlockParams(
                ln1_g=ad.parameter(np.ones(cfg.model_dim)),
                ln1_b=ad.parameter(np.zeros(cfg.model_dim)),
                wq=ad.parameter(rng.normal(0.0, scale, (cfg.model_dim, cfg.model_dim))),
                wk=ad.parameter(rng.normal(0.0, scale, (cfg.model_dim, cfg.model_dim))),
                wv=ad.parameter(rng.normal(0.0, scale, (cfg.model_dim, cfg.model_dim))),
                wo=ad.parameter(rng.normal(0.0, scale, (cfg.model_dim, cfg.model_dim))),
                ln2_g=ad.parameter(np.ones(cfg.model_dim)),
                ln2_b=ad.parameter(np.zeros(cfg.model_dim)),
                w1=ad.parameter(rng.normal(0.0, scale, (cfg.model_dim, cfg.hidden_dim))),
                b1=ad.parameter(np.zeros(cfg.hidden_dim)),
                w2=ad.parameter(rng.normal(0.0, scale, (cfg.hidden_dim, cfg.model_dim))),
                b2=ad.parameter(np.zeros(cfg.model_dim)),
            )
        )
    return EncoderParams(
        w_in=ad.parameter(rng.normal(0.0, scale, (stacked, cfg.model_dim))),
        b_in=ad.parameter(np.zeros(cfg.model_dim)),
        blocks=blocks,
        ln_g=ad.parameter(np.ones(cfg.model_dim)),
        ln_b=ad.parameter(np.zeros(cfg.model_dim)),
    )


def init_predictor_params(rng, cfg, v_ext, scale=0.1):
    return PredictorParams(
        embed=ad.parameter(rng.normal(0.0, scale, (v_ext, cfg.embed_dim))),
        w=ad.parameter(rng.normal(0.0, scale, (cfg.context_size * cfg.embed_dim, cfg.output_dim))),
        b=ad.parameter(np.zeros(cfg.output_dim)),
    )


def encode(features, cfg, params):
    """Strided frame stacking to D, then pre-norm residual blocks of
    self-attention and feed-forward, with a final normalization.

    T0 input frames become T = floor(T0 / subsample_factor) output frames.
    The normalization keeps the residual stream bounded so the joint's
    tanh never saturates as training progresses.
    """
    feats = features.data if isinstance(features, Tensor) else np.asarray(features, dtype=np.float64)
    t0 = feats.shape[0]
    if t0 == 0:
        raise ContractError("encoder received an empty feature matrix")
    if feats.ndim != 2 or feats.shape[1] != cfg.input_dim:
        raise ShapeError(f"features {feats.shape} do not match input_dim {cfg.input_dim}")
    sub = cfg.subsample_factor
    t_out = t0 // sub
    if t_out == 0:
        raise ContractError(f"need at least {sub} frames to subsample, got {t0}")
    stacked = Tensor(np.ascontiguousarray(feats[: t_out * sub]).reshape(t_out, sub * cfg.input_dim))
    h = ad.add(ad.matmul(stacked, params.w_in), params.b_in)
    inv_sqrt_d = 1.0 / math.sqrt(cfg.model_dim)
    for blk in params.blocks:
        a = ad.layer_norm(h, blk.ln1_g, blk.ln1_b)
        q = ad.matmul(a, blk.wq)
        k = ad.matmul(a, blk.wk)
        v = ad.matmul(a, blk.wv)
        att = ad.softmax(ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt_d), axis=-1)
        h = ad.add(h, ad.matmul(ad.matmul(att, v), blk.wo))
        f = ad.layer_norm(h, blk.ln2_g, blk.ln2_b)
        ff = ad.matmul(ad.relu(ad.add(ad.matmul(f, blk.w1), blk.b1)), blk.w2)
        h = ad.add(h, ad.add(ff, blk.b2))
    return ad.layer_norm(h, params.ln_g, params.ln_b)


def _padded_context(history, context_size):
    tail = tuple(int(t) for t in history)[-context_size:]
    return (BLANK,) * (context_size - len(tail)) + tail


def histories_for(tokens, context_size):
    """Per-position predictor contexts for a target sequence: position u
    sees the last ``context_size`` of tokens[:u], blank-padded on the left."""
    tokens = [int(t) for t in tokens]
    return [_padded_context(tokens[:u], context_size) for u in range(len(tokens) + 1)]


def predict_rows(histories, cfg, params):
    """Stateless predictor over a batch of contexts -> (len(histories), D)."""
    c = cfg.context_size
    ids = []
    for h in histories:
        ids.extend(_padded_context(h, c))
    rows = ad.embedding_lookup(params.embed, ids)
    flat = ad.reshape(rows, (len(histories), c * cfg.embed_dim))
    return ad.relu(ad.add(ad.matmul(flat, params.w), params.b))


def predict(history, cfg, params):
    """Predictor state for a single emission history -> (D,)."""
    return ad.reshape(predict_rows([history], cfg, params), (cfg.output_dim,))


@dataclass
class TaskBranch:
    """One output head: vocabulary, symbol inventory, predictor, joint."""

    name: str
    vocab: dl.VocabularyDescriptor
    symbols: tuple
    predictor_cfg: PredictorConfig
    predictor: PredictorParams
    joint: td.JointParams

    def encode_text(self, text):
        units = list(text) if self.name == "hanzi" else text.split()
        ids = []
        for unit in units:
            try:
                ids.append(self.symbols.index(unit) + 1)
            except ValueError:
                raise DataError(f"symbol {unit!r} not in the {self.name} inventory") from None
        return ids

    def decode_tokens(self, tokens):
        units = []
        for tok in tokens:
            tok = int(tok)
            if not 1 <= tok < self.vocab.v_base:
                raise ContractError(f"token {tok} is not a base {self.name} symbol")
            units.append(self.symbols[tok - 1])
        return "".join(units) if self.name == "hanzi" else " ".join(units)

    def named(self):
        out = self.predictor.named(f"{self.name}.pred")
        out.update(self.joint.named(f"{self.name}.joint"))
        return out


@dataclass
class MultiTaskModel:
    encoder_cfg: EncoderConfig
    encoder: EncoderParams
    tasks: dict
    mode: DialectMode = field(default_factory=DialectMode)
    adc: dl.ADCParams | None = None
    dii: Tensor | None = None
    n_dialects: int = 0
    lam: float = 0.5
    loss_mode: str = "pruned"
    s_range: int = 5

    def __post_init__(self):
        if self.loss_mode not in ("full", "pruned"):
            raise ConfigError(f"loss mode must be full or pruned, got {self.loss_mode!r}")
        if self.mode.adc and self.adc is None:
            raise ConfigError("classifier mode is on but the model has no classifier params")
        if self.mode.dii and self.dii is None:
            raise ConfigError("embedding-prefix mode is on but the model has no dialect embeddings")


def model_parameters(model):
    """Flat name -> Tensor map covering every trainable parameter."""
    out = model.encoder.named("enc")
    for task in sorted(model.tasks):
        out.update(model.tasks[task].named())
    if model.adc is not None:
        out.update(model.adc.named("adc"))
    if model.dii is not None:
        out["dii.embed"] = model.dii
    return out


def build_model(
    rng,
    feature_dim,
    symbol_tables,
    n_dialects,
    mode=None,
    encoder_cfg=None,
    predictor_cfg=None,
    joint_dim=16,
    lam=0.5,
    loss_mode="pruned",
    s_range=5,
    scale=0.1,
):
    """Assemble a model whose vocabularies come from the symbol tables.

    ``symbol_tables`` maps task name to its unit inventory; token 0 is the
    blank, base symbols occupy 1..len(inventory), and K dialect tokens are
    appended on top when the dialect mode calls for them.
    """
    mode = mode or DialectMode()
    encoder_cfg = encoder_cfg or EncoderConfig(input_dim=feature_dim)
    predictor_cfg = predictor_cfg or PredictorConfig(output_dim=encoder_cfg.model_dim)
    if encoder_cfg.input_dim != feature_dim:
        raise ConfigError(
            f"encoder input_dim {encoder_cfg.input_dim} != feature dim {feature_dim}"
        )
    if predictor_cfg.output_dim != encoder_cfg.model_dim:
        raise ConfigError("predictor output dim must match encoder model dim")
    tasks = {}
    for name in sorted(symbol_tables):
        if name not in TASKS:
            raise ConfigError(f"unknown task {name!r}; choose from {TASKS}")
        symbols = tuple(symbol_tables[name])
        v_base = 1 + len(symbols)
        k = n_dialects if mode.extends_vocab else 0
        vocab = dl.VocabularyDescriptor(v_base=v_base, n_dialects=k)
        tasks[name] = TaskBranch(
            name=name,
            vocab=vocab,
            symbols=symbols,
            predictor_cfg=predictor_cfg,
            predictor=init_predictor_params(rng, predictor_cfg, vocab.v_ext, scale),
            joint=td.init_joint_params(rng, encoder_cfg.model_dim, joint_dim, vocab.v_ext, scale),
        )
    adc = dl.init_adc_params(rng, encoder_cfg.model_dim, n_dialects, scale) if mode.adc else None
    # The dialect rows start at zero so the prefix frame is uninformative
    # early on.  A random init lets the lattice lock onto emitting the
    # leading tokens at frame 0 (the one frame that identifies the dialect
    # before any history exists) while alignments are still diffuse, and
    # that local optimum survives training.
    dii = (
        ad.parameter(np.zeros((n_dialects, encoder_cfg.model_dim)))
        if mode.dii
        else None
    )
    return MultiTaskModel(
        encoder_cfg=encoder_cfg,
        encoder=init_encoder_params(rng, encoder_cfg, scale),
        tasks=tasks,
        mode=mode,
        adc=adc,
        dii=dii,
        n_dialects=n_dialects,
        lam=lam,
        loss_mode=loss_mode,
        s_range=s_range,
    )


def task_grid(model, branch, h_enc, tokens):
    """Full joint grid for a target sequence (used by tests and decoding)."""
    h_pred = predict_rows(histories_for(tokens, branch.predictor_cfg.context_size),
                          branch.predictor_cfg, branch.predictor)
    return td.joint_forward(h_enc, h_pred, branch.joint)


def _simple_scores(branch, h_enc, h_pred):
    # Frame-only and token-only joint rows: cheap stand-ins for the full
    # grid when choosing the pruning band.  No gradients needed.
    with ad.no_grad():
        am = ad.add(ad.matmul(h_enc, branch.joint.w_enc), branch.joint.bias)
        am = ad.add(ad.matmul(ad.tanh(am), branch.joint.w_out), branch.joint.b_out)
        lm = ad.matmul(ad.tanh(ad.matmul(h_pred, branch.joint.w_pred)), branch.joint.w_out)
    return am.data, lm.data


def _banded_grid(branch, h_enc, h_pred, start, width):
    """Materialize only the in-band joint cells: (T', width, V) tensor."""
    t_prime = h_enc.shape[0]
    joint_dim = branch.joint.w_enc.shape[1]
    vocab = branch.joint.w_out.shape[1]
    a = ad.matmul(h_enc, branch.joint.w_enc)
    b = ad.matmul(h_pred, branch.joint.w_pred)
    ids = (np.asarray(start)[:, None] + np.arange(width)[None, :]).reshape(-1)
    b_band = ad.reshape(ad.embedding_lookup(b, ids), (t_prime, width, joint_dim))
    h = ad.tanh(ad.add(ad.frame_bias_add(b_band, a), branch.joint.bias))
    logits = ad.add(ad.matmul(ad.reshape(h, (t_prime * width, joint_dim)), branch.joint.w_out),
                    branch.joint.b_out)
    return ad.reshape(ad.log_softmax(logits, axis=-1), (t_prime, width, vocab))


def task_loss_tensor(model, branch, h_enc, tokens):
    """Transducer loss for one task branch, full or pruned per the model."""
    h_pred = predict_rows(histories_for(tokens, branch.predictor_cfg.context_size),
                          branch.predictor_cfg, branch.predictor)
    if model.loss_mode == "full":
        grid = td.joint_forward(h_enc, h_pred, branch.joint)
        return td.rnnt_loss_tensor(grid, tokens, blank=BLANK)
    am, lm = _simple_scores(branch, h_enc, h_pred)
    rng_band = td.compute_prune_range(am, lm, tokens, model.s_range)
    width = rng_band.width(len(tokens))
    band = _banded_grid(branch, h_enc, h_pred, rng_band.start, width)
    return td.pruned_loss_tensor(band, rng_band, tokens, blank=BLANK)


@dataclass
class ForwardResult:
    l_final: Tensor
    l_asr: float
    l_adc: float | None
    per_task: dict
    n_utterances: int


def multitask_forward(batch, model, mode=None):
    """Mean combined loss over a batch of utterances.

    Per utterance: encode once, optionally classify the dialect and prefix
    its embedding (teacher-forced with the true dialect), then score each
    task's conditioned targets with the transducer loss.  The speech loss
    is the unweighted sum over tasks; the classifier loss is added with
    weight ``model.lam``.
    """
    mode = mode or model.mode
    if not batch:
        raise ContractError("empty batch")
    n = len(batch)
    asr_terms = []
    adc_terms = []
    per_task = {name: 0.0 for name in model.tasks}
    for utt in batch:
        d = utt.dialect.index
        h = encode(utt.features, model.encoder_cfg, model.encoder)
        if mode.adc:
            adc_terms.append(dl.adc_loss(dl.adc_forward(h, model.adc).logits, d))
        if mode.dii:
            h = dl.dii_augment(h, d, model.dii)
        for name, branch in model.tasks.items():
            text = utt.transcript_h if name == "hanzi" else utt.transcript_p
            if text is None:
                raise DataError(f"utterance {utt.id} is missing its {name} transcript")
            y = branch.encode_text(text)
            if mode.conditioning != "none":
                y = list(dl.condition_targets(y, d, mode.conditioning, branch.vocab).tokens)
            loss = task_loss_tensor(model, branch, h, y)
            per_task[name] += float(loss.data) / n
            asr_terms.append(loss)
    l_asr = ad.scale(_sum_terms(asr_terms), 1.0 / n)
    if adc_terms:
        l_adc = ad.scale(_sum_terms(adc_terms), 1.0 / n)
        l_final = dl.combine_losses(l_asr, l_adc, model.lam)
        adc_value = float(l_adc.data)
    else:
        l_final = l_asr
        adc_value = None
    return ForwardResult(
        l_final=l_final,
        l_asr=float(l_asr.data),
        l_adc=adc_value,
        per_task=per_task,
        n_utterances=n,
    )


def _sum_terms(terms):
    total = terms[0]
    for term in terms[1:]:
        total = ad.add(total, term)
    return total
