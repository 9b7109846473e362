"""Error-rate and efficiency metrics.

Error rates follow the (S + D + I) / N_ref convention over reference
units: Unicode code points for character error rate, whitespace-separated
syllables for syllable error rate.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import MetricError

__all__ = [
    "EditOps",
    "EfficiencyReport",
    "edit_ops",
    "split_units",
    "corpus_rate",
    "dialect_accuracy",
    "rtfx",
    "count_params",
]


@dataclass(frozen=True)
class EditOps:
    """Counts of substitutions, deletions, insertions against a reference."""

    s: int
    d: int
    i: int
    n_ref: int

    @property
    def distance(self):
        return self.s + self.d + self.i

    def __add__(self, other):
        return EditOps(self.s + other.s, self.d + other.d, self.i + other.i,
                       self.n_ref + other.n_ref)


def edit_ops(ref, hyp):
    """Levenshtein-minimal operation counts.

    When several minimal alignments exist, the backtrace prefers
    substitution over deletion over insertion, so counts are deterministic.
    """
    ref = list(ref)
    hyp = list(hyp)
    nr, nh = len(ref), len(hyp)
    dist = [[0] * (nh + 1) for _ in range(nr + 1)]
    for i in range(1, nr + 1):
        dist[i][0] = i
    for j in range(1, nh + 1):
        dist[0][j] = j
    for i in range(1, nr + 1):
        row, prev = dist[i], dist[i - 1]
        r = ref[i - 1]
        for j in range(1, nh + 1):
            cost = 0 if r == hyp[j - 1] else 1
            row[j] = min(prev[j - 1] + cost, prev[j] + 1, row[j - 1] + 1)
    s = d = ins = 0
    i, j = nr, nh
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i][j] == dist[i - 1][j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] != hyp[j - 1]:
                s += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i][j] == dist[i - 1][j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditOps(s=s, d=d, i=ins, n_ref=nr)


def split_units(text, unit):
    """Tokenize scoring units: code points for char, whitespace for syllable."""
    if unit == "char":
        return list(text)
    if unit == "syllable":
        return text.split()
    raise MetricError(f"unknown unit {unit!r}; choose char or syllable")


def corpus_rate(pairs, unit):
    """Corpus-level error percentage: 100 * sum(S+D+I) / sum(N_ref)."""
    total = EditOps(0, 0, 0, 0)
    for ref, hyp in pairs:
        total = total + edit_ops(split_units(ref, unit), split_units(hyp, unit))
    if total.n_ref == 0:
        raise MetricError("corpus rate undefined: zero reference units")
    return 100.0 * total.distance / total.n_ref


def dialect_accuracy(predictions, truths):
    """Percent of correct dialect predictions, 2 decimals; None is wrong."""
    predictions = list(predictions)
    truths = list(truths)
    if len(predictions) != len(truths):
        raise MetricError(f"{len(predictions)} predictions vs {len(truths)} truths")
    if not truths:
        raise MetricError("dialect accuracy undefined on an empty set")
    correct = sum(1 for p, t in zip(predictions, truths) if p is not None and int(p) == int(t))
    return round(100.0 * correct / len(truths), 2)


def rtfx(audio_seconds, wall_seconds):
    """Inverse real-time factor: audio duration over processing time."""
    if wall_seconds <= 0:
        raise MetricError(f"wall time must be positive, got {wall_seconds}")
    return float(audio_seconds) / float(wall_seconds)


def count_params(model):
    """Trainable parameter count in millions."""
    from .model import model_parameters

    tensors = model if isinstance(model, dict) else model_parameters(model)
    return sum(p.data.size for p in tensors.values()) / 1e6


@dataclass(frozen=True)
class EfficiencyReport:
    """Decode-speed benchmark: per-run wall times plus the mean ratio."""

    params_millions: float
    audio_seconds: float
    run_wall_seconds: tuple

    def __post_init__(self):
        if len(self.run_wall_seconds) < 1:
            raise MetricError("efficiency report needs at least one timed run")

    @property
    def wall_seconds(self):
        return sum(self.run_wall_seconds) / len(self.run_wall_seconds)

    @property
    def rtfx(self):
        return rtfx(self.audio_seconds, self.wall_seconds)

    def run_rtfx(self):
        return tuple(rtfx(self.audio_seconds, w) for w in self.run_wall_seconds)
