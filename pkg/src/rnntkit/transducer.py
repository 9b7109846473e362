"""Transducer joint network and lattice losses.

The lattice is the standard one: state (t, u) means t frames consumed and
u target tokens emitted.  Blank consumes log_probs[t, u, blank] and moves
to (t+1, u); the token y[u] consumes log_probs[t, u, y[u]] and moves to
(t, u+1).  Every complete path ends with the blank at (T'-1, U).

Losses that would be +infinity (no alignment has probability > 0) are
returned as the finite sentinel ``INF_LOSS`` with zero gradients, so batch
aggregation never propagates non-finite values into parameter updates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ShapeError, SizeError

__all__ = [
    "INF_LOSS",
    "JointParams",
    "JointLogProbGrid",
    "LossResult",
    "PruneRange",
    "init_joint_params",
    "joint_forward",
    "rnnt_loss_full",
    "rnnt_loss_tensor",
    "enumerate_alignments",
    "rnnt_loss_pruned",
    "pruned_loss_tensor",
    "band_from_grid",
    "compute_prune_range",
    "cell_occupancy",
]

INF_LOSS = 1e30
NEG_INF = float("-inf")
MAX_ENUM_PATHS = 1_000_000


def _lae(a, b):
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + math.log1p(math.exp(b - a))


@dataclass
class JointLogProbGrid:
    """Per-utterance T' x (U+1) x V_ext lattice of normalized log-probs."""

    t_prime: int
    u_len: int
    v_ext: int
    logprobs: Tensor

    def validate(self, tol=1e-9):
        lp = self.logprobs.data
        if lp.shape != (self.t_prime, self.u_len + 1, self.v_ext):
            raise ShapeError(
                f"grid shape {lp.shape} inconsistent with "
                f"(T'={self.t_prime}, U+1={self.u_len + 1}, V={self.v_ext})"
            )
        lse = np.log(np.sum(np.exp(lp - lp.max(axis=2, keepdims=True)), axis=2))
        lse += lp.max(axis=2)
        if np.max(np.abs(lse)) > tol:
            raise ContractError(f"grid not normalized: max |logsumexp| = {np.max(np.abs(lse)):g}")


@dataclass
class LossResult:
    loss: float
    grad_logprobs: np.ndarray | None = None


@dataclass
class PruneRange:
    """Per-frame band of retained u positions: [start[t], start[t] + s_range)."""

    start: np.ndarray
    s_range: int

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=np.int64)
        if self.s_range < 1:
            raise ContractError(f"s_range must be >= 1, got {self.s_range}")

    def width(self, u_len):
        return min(self.s_range, u_len + 1)

    def validate(self, t_prime, u_len):
        if self.start.shape != (t_prime,):
            raise ContractError(f"range has {self.start.size} starts for T'={t_prime}")
        if np.any(np.diff(self.start) < 0):
            raise ContractError("range start indices must be non-decreasing in t")
        hi = u_len + 1 - self.width(u_len)
        if self.start.size and (self.start.min() < 0 or self.start.max() > hi):
            raise ContractError(f"range starts must lie in [0, {hi}]")


@dataclass
class JointParams:
    """Feed-forward combiner: project both inputs to a shared hidden size,
    add, tanh, project to the vocabulary, log-normalize."""

    w_enc: Tensor
    w_pred: Tensor
    bias: Tensor
    w_out: Tensor
    b_out: Tensor

    def named(self, prefix):
        return {
            f"{prefix}.w_enc": self.w_enc,
            f"{prefix}.w_pred": self.w_pred,
            f"{prefix}.bias": self.bias,
            f"{prefix}.w_out": self.w_out,
            f"{prefix}.b_out": self.b_out,
        }


def init_joint_params(rng, dim, joint_dim, vocab_size, scale=0.1):
    return JointParams(
        w_enc=ad.parameter(rng.normal(0.0, scale, (dim, joint_dim))),
        w_pred=ad.parameter(rng.normal(0.0, scale, (dim, joint_dim))),
        bias=ad.parameter(np.zeros(joint_dim)),
        w_out=ad.parameter(rng.normal(0.0, scale, (joint_dim, vocab_size))),
        b_out=ad.parameter(np.zeros(vocab_size)),
    )


def joint_forward(h_enc, h_pred, params):
    """Combine encoder frames with predictor states into a normalized grid."""
    if h_enc.shape[-1] != h_pred.shape[-1]:
        raise ShapeError(
            f"joint inputs disagree on model dim: {tuple(h_enc.shape)} vs {tuple(h_pred.shape)}"
        )
    t_prime, u1 = h_enc.shape[0], h_pred.shape[0]
    joint_dim = params.w_enc.shape[1]
    vocab = params.w_out.shape[1]
    a = ad.matmul(h_enc, params.w_enc)
    b = ad.matmul(h_pred, params.w_pred)
    h = ad.tanh(ad.add(ad.pairwise_sum(a, b), params.bias))
    flat = ad.reshape(h, (t_prime * u1, joint_dim))
    logits = ad.add(ad.matmul(flat, params.w_out), params.b_out)
    grid = ad.reshape(ad.log_softmax(logits, axis=-1), (t_prime, u1, vocab))
    return JointLogProbGrid(t_prime=t_prime, u_len=u1 - 1, v_ext=vocab, logprobs=grid)


def _grid_array(grid):
    if isinstance(grid, JointLogProbGrid):
        return grid.logprobs.data
    if isinstance(grid, Tensor):
        return grid.data
    return np.asarray(grid, dtype=np.float64)


def _check_targets(y, blank, vocab, t_prime):
    y = [int(tok) for tok in y]
    if t_prime < 1:
        raise ContractError(f"lattice needs T' >= 1, got T'={t_prime} with U={len(y)}")
    for tok in y:
        if tok == blank:
            raise ContractError("target sequence must not contain the blank token")
        if not 0 <= tok < vocab:
            raise IndexError(f"target token {tok} outside vocabulary of size {vocab}")
    return y


def _extract_transitions(lp, y, blank):
    t_prime, u1 = lp.shape[0], lp.shape[1]
    u_len = u1 - 1
    blank_lp = lp[:, :, blank].tolist()
    if u_len:
        emit_lp = lp[:, np.arange(u_len), y].tolist()
    else:
        emit_lp = [[] for _ in range(t_prime)]
    return blank_lp, emit_lp


def _alpha(blank_lp, emit_lp, t_prime, u_len):
    alpha = [[NEG_INF] * (u_len + 1) for _ in range(t_prime)]
    alpha[0][0] = 0.0
    for t in range(t_prime):
        row = alpha[t]
        if t > 0:
            prev, pb = alpha[t - 1], blank_lp[t - 1]
            for u in range(u_len + 1):
                if prev[u] != NEG_INF:
                    row[u] = prev[u] + pb[u]
        em = emit_lp[t]
        for u in range(1, u_len + 1):
            if row[u - 1] != NEG_INF:
                row[u] = _lae(row[u], row[u - 1] + em[u - 1])
    return alpha


def _beta(blank_lp, emit_lp, t_prime, u_len):
    beta = [[NEG_INF] * (u_len + 1) for _ in range(t_prime)]
    for t in range(t_prime - 1, -1, -1):
        row = beta[t]
        em, bl = emit_lp[t], blank_lp[t]
        for u in range(u_len, -1, -1):
            if t == t_prime - 1:
                acc = bl[u] if u == u_len else NEG_INF
            else:
                nxt = beta[t + 1][u]
                acc = bl[u] + nxt if nxt != NEG_INF else NEG_INF
            if u < u_len and row[u + 1] != NEG_INF:
                acc = _lae(acc, em[u] + row[u + 1])
            row[u] = acc
    return beta


def rnnt_loss_full(grid, y, blank=0, want_grad=True):
    """Exact negative log-probability of ``y`` summed over all alignments.

    Returns a ``LossResult``; ``grad_logprobs`` (when requested) is the raw
    gradient with respect to each grid entry, i.e. minus the posterior mass
    of the transition that consumes that entry.
    """
    lp = _grid_array(grid)
    t_prime, u1 = lp.shape[0], lp.shape[1]
    y = _check_targets(y, blank, lp.shape[2], t_prime)
    if len(y) != u1 - 1:
        raise ContractError(f"grid has U+1={u1} predictor rows but len(y)={len(y)}")
    u_len = len(y)
    blank_lp, emit_lp = _extract_transitions(lp, y, blank)
    alpha = _alpha(blank_lp, emit_lp, t_prime, u_len)
    log_z = alpha[t_prime - 1][u_len] + blank_lp[t_prime - 1][u_len]
    if log_z == NEG_INF or math.isnan(log_z):
        return LossResult(INF_LOSS, np.zeros_like(lp) if want_grad else None)
    if not want_grad:
        return LossResult(-log_z, None)
    beta = _beta(blank_lp, emit_lp, t_prime, u_len)
    grad = np.zeros_like(lp)
    for t in range(t_prime):
        arow, brow = alpha[t], blank_lp[t]
        for u in range(u_len + 1):
            a = arow[u]
            if a == NEG_INF:
                continue
            if u < u_len:
                nxt = beta[t][u + 1]
                if nxt != NEG_INF:
                    grad[t, u, y[u]] -= math.exp(a + emit_lp[t][u] + nxt - log_z)
            if t + 1 < t_prime:
                cont = beta[t + 1][u]
                if cont != NEG_INF:
                    grad[t, u, blank] -= math.exp(a + brow[u] + cont - log_z)
            elif u == u_len:
                grad[t, u, blank] -= math.exp(a + brow[u] - log_z)
    return LossResult(-log_z, grad)


def rnnt_loss_tensor(grid, y, blank=0):
    """Graph-recorded variant of the exact loss, for training."""
    logprobs = grid.logprobs if isinstance(grid, JointLogProbGrid) else grid
    result = rnnt_loss_full(logprobs.data, y, blank, want_grad=True)
    g_local = result.grad_logprobs
    return ad.custom_op(np.asarray(result.loss), (logprobs,), lambda g: (float(g) * g_local,))


def enumerate_alignments(grid, y, blank=0):
    """Brute-force oracle: -log of the exact sum over explicit paths.

    Guarded: refuses lattices with more than ``MAX_ENUM_PATHS`` paths.
    """
    lp = _grid_array(grid)
    t_prime = lp.shape[0]
    y = _check_targets(y, blank, lp.shape[2], t_prime)
    u_len = len(y)
    if lp.shape[1] != u_len + 1:
        raise ContractError(f"grid has U+1={lp.shape[1]} rows but len(y)={u_len}")
    n_paths = math.comb(t_prime - 1 + u_len, u_len)
    if n_paths > MAX_ENUM_PATHS:
        raise SizeError(f"{n_paths} alignment paths exceed the enumeration guard")
    blank_lp, emit_lp = _extract_transitions(lp, y, blank)
    scores = []

    def walk(t, u, acc):
        if acc == NEG_INF:
            return
        if u < u_len:
            walk(t, u + 1, acc + emit_lp[t][u])
        if t + 1 < t_prime:
            walk(t + 1, u, acc + blank_lp[t][u])
        elif u == u_len:
            scores.append(acc + blank_lp[t][u])

    walk(0, 0, 0.0)
    finite = [s for s in scores if s != NEG_INF]
    if not finite:
        return INF_LOSS
    m = max(finite)
    return -(m + math.log(math.fsum(math.exp(s - m) for s in finite)))


def band_from_grid(grid):
    """Adapter: a grid factory backed by a fully materialized grid."""
    lp = _grid_array(grid)

    def factory(t, u_start, width):
        return lp[t, u_start:u_start + width, :]

    return factory


def _banded_alpha_beta(band_lp, start, y, blank, u_len):
    t_prime, width = band_lp.shape[0], band_lp.shape[1]
    blank_band = band_lp[:, :, blank].tolist()
    emit_band = []
    for t in range(t_prime):
        row = []
        for i in range(width):
            u = start[t] + i
            row.append(band_lp[t, i, y[u]] if u < u_len else NEG_INF)
        emit_band.append(row)

    alpha = [[NEG_INF] * width for _ in range(t_prime)]
    for t in range(t_prime):
        row = alpha[t]
        for i in range(width):
            u = start[t] + i
            if u > u_len:
                continue
            acc = 0.0 if (t == 0 and u == 0) else NEG_INF
            if t > 0:
                j = u - start[t - 1]
                if 0 <= j < width and alpha[t - 1][j] != NEG_INF:
                    acc = _lae(acc, alpha[t - 1][j] + blank_band[t - 1][j])
            if i > 0 and u >= 1 and row[i - 1] != NEG_INF:
                acc = _lae(acc, row[i - 1] + emit_band[t][i - 1])
            row[i] = acc

    beta = [[NEG_INF] * width for _ in range(t_prime)]
    for t in range(t_prime - 1, -1, -1):
        row = beta[t]
        for i in range(width - 1, -1, -1):
            u = start[t] + i
            if u > u_len:
                continue
            if t == t_prime - 1:
                acc = blank_band[t][i] if u == u_len else NEG_INF
            else:
                j = u - start[t + 1]
                if 0 <= j < width and beta[t + 1][j] != NEG_INF:
                    acc = blank_band[t][i] + beta[t + 1][j]
                else:
                    acc = NEG_INF
            if u < u_len and i + 1 < width and row[i + 1] != NEG_INF:
                acc = _lae(acc, emit_band[t][i] + row[i + 1])
            row[i] = acc
    return alpha, beta, blank_band, emit_band


def _pruned_core(band_lp, start, y, blank, u_len, want_grad):
    t_prime, width = band_lp.shape[0], band_lp.shape[1]
    alpha, beta, blank_band, emit_band = _banded_alpha_beta(band_lp, start, y, blank, u_len)
    i_final = u_len - start[t_prime - 1]
    if 0 <= i_final < width and alpha[t_prime - 1][i_final] != NEG_INF:
        log_z = alpha[t_prime - 1][i_final] + blank_band[t_prime - 1][i_final]
    else:
        log_z = NEG_INF
    if log_z == NEG_INF or math.isnan(log_z):
        return INF_LOSS, np.zeros_like(band_lp) if want_grad else None
    if not want_grad:
        return -log_z, None
    grad = np.zeros_like(band_lp)
    for t in range(t_prime):
        for i in range(width):
            u = start[t] + i
            if u > u_len:
                continue
            a = alpha[t][i]
            if a == NEG_INF:
                continue
            if u < u_len and i + 1 < width and beta[t][i + 1] != NEG_INF:
                grad[t, i, y[u]] -= math.exp(a + emit_band[t][i] + beta[t][i + 1] - log_z)
            if t + 1 < t_prime:
                j = u - start[t + 1]
                if 0 <= j < width and beta[t + 1][j] != NEG_INF:
                    grad[t, i, blank] -= math.exp(a + blank_band[t][i] + beta[t + 1][j] - log_z)
            elif u == u_len:
                grad[t, i, blank] -= math.exp(a + blank_band[t][i] - log_z)
    return -log_z, grad


def rnnt_loss_pruned(grid_factory, prune_range, y, blank=0, want_grad=True):
    """Loss over the restricted lattice defined by ``prune_range``.

    ``grid_factory(t, u_start, width)`` must return the (width, V) block of
    log-probs for u = u_start .. u_start + width - 1 at frame t; it is
    called exactly once per frame and only for in-range cells, which is the
    memory-saving contract.  With a full-width, zero-offset range the
    result equals ``rnnt_loss_full`` exactly.
    """
    start = np.asarray(prune_range.start, dtype=np.int64)
    t_prime = start.size
    y = [int(tok) for tok in y]
    u_len = len(y)
    prune_range.validate(t_prime, u_len)
    width = prune_range.width(u_len)
    band_lp = np.stack(
        [np.asarray(grid_factory(t, int(start[t]), width), dtype=np.float64) for t in range(t_prime)]
    )
    if band_lp.shape[1] != width:
        raise ContractError(f"grid factory returned {band_lp.shape[1]} rows, expected {width}")
    _check_targets(y, blank, band_lp.shape[2], t_prime)
    loss, grad = _pruned_core(band_lp, start.tolist(), y, blank, u_len, want_grad)
    return LossResult(loss, grad)


def pruned_loss_tensor(banded, prune_range, y, blank=0):
    """Graph-recorded pruned loss over an already-materialized band tensor."""
    start = np.asarray(prune_range.start, dtype=np.int64)
    u_len = len(y)
    prune_range.validate(start.size, u_len)
    y = _check_targets(y, blank, banded.shape[2], start.size)
    loss, grad = _pruned_core(banded.data, start.tolist(), y, blank, u_len, True)
    return ad.custom_op(np.asarray(loss), (banded,), lambda g: (float(g) * grad,))


def cell_occupancy(grid, y, blank=0):
    """Posterior probability that an alignment consumes each (t, u) cell."""
    lp = _grid_array(grid)
    t_prime = lp.shape[0]
    y = _check_targets(y, blank, lp.shape[2], t_prime)
    u_len = len(y)
    blank_lp, emit_lp = _extract_transitions(lp, y, blank)
    alpha = _alpha(blank_lp, emit_lp, t_prime, u_len)
    beta = _beta(blank_lp, emit_lp, t_prime, u_len)
    log_z = beta[0][0]
    occ = np.zeros((t_prime, u_len + 1))
    if log_z == NEG_INF:
        return occ
    for t in range(t_prime):
        for u in range(u_len + 1):
            a = alpha[t][u]
            b = beta[t][u]
            if a != NEG_INF and b != NEG_INF:
                occ[t, u] = math.exp(a + b - log_z)
    return occ


def compute_prune_range(simple_am, simple_lm, y, s_range):
    """Monotone band of width ``s_range`` centered on the occupancy ridge
    of the additive simple lattice ``am[t] + lm[u]``."""
    if s_range < 1:
        raise ContractError(f"s_range must be >= 1, got {s_range}")
    am = np.asarray(simple_am, dtype=np.float64)
    lm = np.asarray(simple_lm, dtype=np.float64)
    if am.ndim != 2 or lm.ndim != 2 or am.shape[1] != lm.shape[1]:
        raise ShapeError(f"simple scores disagree: am {am.shape} vs lm {lm.shape}")
    t_prime, u1 = am.shape[0], lm.shape[0]
    u_len = u1 - 1
    if len(y) != u_len:
        raise ContractError(f"simple lm has {u1} rows but len(y)={len(y)}")
    width = min(s_range, u_len + 1)
    hi = u_len + 1 - width
    if hi == 0:
        return PruneRange(np.zeros(t_prime, dtype=np.int64), s_range)
    if t_prime == 1:
        # Single frame: the band must end on the terminal cell (0, U).
        return PruneRange(np.array([hi], dtype=np.int64), s_range)

    mix = am[:, None, :] + lm[None, :, :]
    mix = mix - mix.max(axis=2, keepdims=True)
    lp = mix - np.log(np.sum(np.exp(mix), axis=2, keepdims=True))
    occ = cell_occupancy(lp, y, blank=0)
    if occ.sum() == 0.0:
        # Impossible target under the simple scores: fall back to a linear ramp.
        ramp = np.round(np.linspace(0.0, hi, t_prime)).astype(np.int64)
        return PruneRange(ramp, s_range)
    windows = np.stack([occ[:, s:s + width].sum(axis=1) for s in range(hi + 1)], axis=1)
    start = np.argmax(windows, axis=1).astype(np.int64)
    # The origin (0, 0) must sit in the first band and the terminal blank
    # cell (T'-1, U) in the last, and the start may rise at most width-1
    # per frame so consecutive bands overlap.  Clamp into that corridor,
    # then smooth to a monotone band with in-range transitions.
    t_idx = np.arange(t_prime)
    lo = np.maximum(0, hi - (t_prime - 1 - t_idx) * (width - 1))
    cap = np.minimum(hi, t_idx * (width - 1))
    start = np.clip(start, lo, cap)
    for t in range(t_prime - 2, -1, -1):
        start[t] = min(start[t], start[t + 1])
    for t in range(1, t_prime):
        start[t] = min(start[t], start[t - 1] + width - 1)
    return PruneRange(start, s_range)
