"""Synthetic multi-dialect corpus with two parallel orthographies.

Each lexicon entry is a single-syllable word: an (onset, rime) phoneme
pair, an underlying tone, and a logographic character.  Dialects vary the
surface forms the way real dialect families do:

* phonetic: every phoneme prototype vector is perturbed per dialect (a
  shared "accent" direction plus per-phoneme directions), so dialect
  identity is present in the acoustics;
* tonal: each dialect relabels underlying tones through its own
  permutation, so the written tone digit depends on the dialect while the
  acoustic tone cue reflects the underlying tone only;
* lexical: a fraction of words per dialect swap surface forms; half of
  those swap only the character (same pronunciation, dialect-specific
  spelling), half swap both pronunciation and character.

Features are phoneme prototypes repeated for a sampled duration, plus a
weak tone vector, a per-speaker constant offset, and Gaussian noise.
Splits are speaker-disjoint and dialect-balanced by construction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .dialect import DialectId
from .errors import ConfigError, DataError

__all__ = [
    "FRAME_SHIFT",
    "DATA_FORMAT",
    "SynthSpec",
    "Utterance",
    "Lexicon",
    "Dataset",
    "gen_corpus",
    "write_dataset",
    "read_dataset",
    "subset_by_dialect",
]

FRAME_SHIFT = 0.01
DATA_FORMAT = "tk-data-1"
SPLITS = ("train", "dev", "test")

DIALECT_NAMES = ("north", "south", "east", "west", "plain", "coast", "hills", "delta")
ONSET_POOL = ("b", "d", "g", "k", "m", "n", "p", "t", "s", "z", "l", "f", "h", "r", "c", "j")
RIME_POOL = ("a", "e", "i", "o", "u", "ai", "au", "am", "an", "em", "in", "un",
             "on", "ui", "iu", "ang")
# Fraction of each dialect's phoneme perturbation that points along the
# dialect's shared accent direction (the rest is per-phoneme).
ACCENT_FRACTION = 0.8
CHAR_BASE = 0x4E00


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings; the defaults mirror the reference experiment
    shape (3 dialects, 18/1/1 speakers per dialect) at desk scale."""

    n_dialects: int = 3
    n_phonemes: int = 24
    n_words: int = 60
    n_tones: int = 4
    speakers_per_dialect: tuple = (18, 1, 1)
    utterances_per_speaker: int = 40
    words_per_utterance: tuple = (3, 8)
    feature_dim: int = 16
    frames_per_phoneme: tuple = (2, 4)
    noise_level: float = 0.15
    phonetic_shift: float = 1.2
    tone_strength: float = 0.25
    speaker_offset: float = 0.1
    lexical_swap_fraction: float = 0.2
    seed: int = 0

    def validate(self):
        if self.n_dialects < 2 or self.n_dialects > len(DIALECT_NAMES):
            raise ConfigError(f"n_dialects must be in [2, {len(DIALECT_NAMES)}]")
        n_on = self.n_phonemes // 2
        n_ri = self.n_phonemes - n_on
        if n_on < 1 or n_on > len(ONSET_POOL) or n_ri > len(RIME_POOL):
            raise ConfigError(f"n_phonemes {self.n_phonemes} outside the supported range")
        if self.n_words < 2 or self.n_words > n_on * n_ri:
            raise ConfigError(
                f"n_words {self.n_words} must fit the {n_on}x{n_ri} pronunciation space"
            )
        if self.n_tones < 1 or self.n_tones > 9:
            raise ConfigError("n_tones must be in [1, 9]")
        if len(self.speakers_per_dialect) != 3 or min(self.speakers_per_dialect) < 1:
            raise ConfigError("speakers_per_dialect needs >= 1 speaker per split")
        if self.utterances_per_speaker < 1:
            raise ConfigError("utterances_per_speaker must be >= 1")
        lo, hi = self.words_per_utterance
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad words_per_utterance range ({lo}, {hi})")
        rlo, rhi = self.frames_per_phoneme
        if not 1 <= rlo <= rhi:
            raise ConfigError(f"bad frames_per_phoneme range ({rlo}, {rhi})")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        if not 0.0 <= self.lexical_swap_fraction <= 1.0:
            raise ConfigError("lexical_swap_fraction must lie in [0, 1]")
        if min(self.noise_level, self.phonetic_shift, self.tone_strength,
               self.speaker_offset) < 0:
            raise ConfigError("noise, shift, tone and speaker magnitudes must be >= 0")
        return self


@dataclass
class Utterance:
    id: str
    speaker: str
    dialect: DialectId
    split: str
    features: np.ndarray
    transcript_h: str
    transcript_p: str
    audio_seconds: float

    @property
    def frames(self):
        return self.features.shape[0]


@dataclass
class Lexicon:
    """Per-dialect surface forms for every word slot."""

    onsets: tuple
    rimes: tuple
    n_tones: int
    tone_perm: np.ndarray  # (K, n_tones) underlying tone -> written digit
    pron: np.ndarray       # (K, W, 3) onset id, rime id, underlying tone
    chars: list            # K x W characters
    syllables: list        # K x W written syllables

    @property
    def n_words(self):
        return self.pron.shape[1]

    def syllable_of(self, d, w):
        return self.syllables[d][w]

    def char_of(self, d, w):
        return self.chars[d][w]

    def word_from_syllable(self, d, syllable):
        try:
            return self.syllables[d].index(syllable)
        except ValueError:
            raise DataError(f"syllable {syllable!r} unknown in dialect {d}") from None

    def word_from_char(self, d, char):
        try:
            return self.chars[d].index(char)
        except ValueError:
            raise DataError(f"character {char!r} unknown in dialect {d}") from None


@dataclass
class Dataset:
    dialects: tuple
    feature_dim: int
    hanzi_symbols: tuple
    pinyin_symbols: tuple
    splits: dict
    lexicon: Lexicon | None = None
    frame_shift: float = FRAME_SHIFT

    def split(self, name):
        if name not in self.splits:
            raise DataError(f"unknown split {name!r}; have {sorted(self.splits)}")
        return self.splits[name]

    def symbol_tables(self):
        return {"hanzi": self.hanzi_symbols, "pinyin": self.pinyin_symbols}

    def dialect_id(self, name):
        try:
            return DialectId(self.dialects.index(name), name)
        except ValueError:
            raise DataError(f"unknown dialect {name!r}; have {self.dialects}") from None


def _build_lexicon(spec, rng):
    n_on = spec.n_phonemes // 2
    onsets = ONSET_POOL[:n_on]
    rimes = RIME_POOL[: spec.n_phonemes - n_on]
    pairs = [(o, r) for o in range(len(onsets)) for r in range(len(rimes))]
    order = rng.permutation(len(pairs))
    base_pairs = [pairs[i] for i in order[: spec.n_words]]
    spare_pairs = [pairs[i] for i in order[spec.n_words:]]
    base_tones = rng.integers(1, spec.n_tones + 1, size=spec.n_words)

    k, w_count = spec.n_dialects, spec.n_words
    tone_perm = np.zeros((k, spec.n_tones), dtype=np.int64)
    for d in range(k):
        for tone in range(1, spec.n_tones + 1):
            tone_perm[d, tone - 1] = ((tone - 1 + d) % spec.n_tones) + 1

    next_char = [CHAR_BASE + w_count]
    def fresh_char():
        ch = chr(next_char[0])
        next_char[0] += 1
        return ch

    pron = np.zeros((k, w_count, 3), dtype=np.int64)
    chars = [[chr(CHAR_BASE + w) for w in range(w_count)] for _ in range(k)]
    for d in range(k):
        for w in range(w_count):
            pron[d, w] = (base_pairs[w][0], base_pairs[w][1], base_tones[w])

    n_swap = int(round(spec.lexical_swap_fraction * w_count))
    for d in range(k):
        chosen = rng.choice(w_count, size=n_swap, replace=False)
        for rank, w in enumerate(chosen):
            if rank < (n_swap + 1) // 2:
                # Character-only swap: same sound, dialect-specific spelling.
                chars[d][w] = fresh_char()
            else:
                if not spare_pairs:
                    raise ConfigError("pronunciation space exhausted by lexical swaps")
                onset, rime = spare_pairs.pop(0)
                pron[d, w] = (onset, rime, rng.integers(1, spec.n_tones + 1))
                chars[d][w] = fresh_char()

    syllables = []
    for d in range(k):
        row = []
        for w in range(w_count):
            onset, rime, tone = pron[d, w]
            digit = tone_perm[d, tone - 1]
            row.append(f"{onsets[onset]}{rimes[rime]}{digit}")
        syllables.append(row)
    return Lexicon(
        onsets=tuple(onsets),
        rimes=tuple(rimes),
        n_tones=spec.n_tones,
        tone_perm=tone_perm,
        pron=pron,
        chars=chars,
        syllables=syllables,
    )


def gen_corpus(spec):
    """Generate a speaker-disjoint, dialect-balanced dataset; deterministic
    for a fixed spec (including its seed)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    lex = _build_lexicon(spec, rng)
    k, f_dim = spec.n_dialects, spec.feature_dim

    base_proto = rng.normal(0.0, 1.0, (spec.n_phonemes, f_dim))
    accent = rng.normal(0.0, 1.0, (k, f_dim))
    if k <= f_dim:
        # Orthonormal accent directions keep dialects evenly separated
        # regardless of the seed.
        accent = np.linalg.qr(accent.T)[0].T[:k]
    else:
        accent /= np.linalg.norm(accent, axis=1, keepdims=True)
    per_phone = rng.normal(0.0, 1.0, (k, spec.n_phonemes, f_dim))
    per_phone /= np.linalg.norm(per_phone, axis=2, keepdims=True)
    shift = spec.phonetic_shift * (
        ACCENT_FRACTION * accent[:, None, :] + (1.0 - ACCENT_FRACTION) * per_phone
    )
    proto = base_proto[None, :, :] + shift
    tone_vecs = spec.tone_strength * rng.normal(0.0, 1.0, (spec.n_tones, f_dim))

    n_on = len(lex.onsets)
    splits = {name: [] for name in SPLITS}
    rep_lo, rep_hi = spec.frames_per_phoneme
    len_lo, len_hi = spec.words_per_utterance
    for d in range(k):
        dname = DIALECT_NAMES[d]
        dialect = DialectId(d, dname)
        boundaries = np.cumsum((0,) + tuple(spec.speakers_per_dialect))
        total_speakers = boundaries[-1]
        for s in range(total_speakers):
            split_name = SPLITS[int(np.searchsorted(boundaries, s, side="right")) - 1]
            speaker = f"{dname}-{s:02d}"
            offset = rng.normal(0.0, spec.speaker_offset, f_dim)
            for j in range(spec.utterances_per_speaker):
                n_words = int(rng.integers(len_lo, len_hi + 1))
                words = rng.integers(0, spec.n_words, size=n_words)
                blocks = []
                h_parts, p_parts = [], []
                for w in words:
                    onset, rime, tone = lex.pron[d, w]
                    h_parts.append(lex.char_of(d, int(w)))
                    p_parts.append(lex.syllable_of(d, int(w)))
                    cue = tone_vecs[tone - 1]
                    for ph in (int(onset), n_on + int(rime)):
                        rep = int(rng.integers(rep_lo, rep_hi + 1))
                        blocks.append(np.tile(proto[d, ph] + cue, (rep, 1)))
                feats = np.concatenate(blocks, axis=0)
                feats = feats + offset + rng.normal(0.0, spec.noise_level, feats.shape)
                feats = feats.astype(np.float32)
                splits[split_name].append(
                    Utterance(
                        id=f"{speaker}-u{j:03d}",
                        speaker=speaker,
                        dialect=dialect,
                        split=split_name,
                        features=feats,
                        transcript_h="".join(h_parts),
                        transcript_p=" ".join(p_parts),
                        audio_seconds=feats.shape[0] * FRAME_SHIFT,
                    )
                )

    hanzi_symbols = tuple(sorted({ch for row in lex.chars for ch in row}))
    pinyin_symbols = tuple(sorted({syl for row in lex.syllables for syl in row}))
    return Dataset(
        dialects=tuple(DIALECT_NAMES[:k]),
        feature_dim=f_dim,
        hanzi_symbols=hanzi_symbols,
        pinyin_symbols=pinyin_symbols,
        splits=splits,
        lexicon=lex,
    )


def write_dataset(dataset, out_dir):
    """Serialize to a manifest (JSON lines) plus raw float32 features."""
    os.makedirs(out_dir, exist_ok=True)
    header = {
        "format": DATA_FORMAT,
        "dialects": list(dataset.dialects),
        "feature_dim": dataset.feature_dim,
        "frame_shift": dataset.frame_shift,
        "hanzi_symbols": list(dataset.hanzi_symbols),
        "pinyin_symbols": list(dataset.pinyin_symbols),
    }
    lines = [json.dumps(header, ensure_ascii=False)]
    for split_name in SPLITS:
        offset = 0
        feature_file = f"{split_name}.f32"
        with open(os.path.join(out_dir, feature_file), "wb") as feats_out:
            for utt in dataset.splits.get(split_name, []):
                payload = np.ascontiguousarray(utt.features, dtype="<f4").tobytes()
                feats_out.write(payload)
                lines.append(
                    json.dumps(
                        {
                            "id": utt.id,
                            "speaker": utt.speaker,
                            "dialect": utt.dialect.name,
                            "split": split_name,
                            "frames": utt.frames,
                            "audio_seconds": utt.audio_seconds,
                            "transcript_h": utt.transcript_h,
                            "transcript_p": utt.transcript_p,
                            "feature_file": feature_file,
                            "byte_offset": offset,
                        },
                        ensure_ascii=False,
                    )
                )
                offset += len(payload)
    with open(os.path.join(out_dir, "manifest.jsonl"), "w", encoding="utf-8") as man:
        man.write("\n".join(lines) + "\n")


def read_dataset(data_dir):
    """Load a dataset directory; schema and integrity problems raise
    errors naming the offending record."""
    path = os.path.join(data_dir, "manifest.jsonl")
    if not os.path.exists(path):
        raise DataError(f"no manifest.jsonl under {data_dir}")
    with open(path, encoding="utf-8") as man:
        raw_lines = [line for line in man.read().splitlines() if line.strip()]
    if not raw_lines:
        raise DataError(f"empty manifest in {data_dir}")
    try:
        header = json.loads(raw_lines[0])
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest header is not valid JSON: {exc}") from exc
    if header.get("format") != DATA_FORMAT:
        raise DataError(f"unsupported dataset format {header.get('format')!r}")
    for key in ("dialects", "feature_dim", "hanzi_symbols", "pinyin_symbols"):
        if key not in header:
            raise DataError(f"manifest header missing field {key!r}")
    dialects = tuple(header["dialects"])
    f_dim = int(header["feature_dim"])
    feature_bytes = {}
    splits = {name: [] for name in SPLITS}
    for line_no, line in enumerate(raw_lines[1:], start=2):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"manifest line {line_no} is not valid JSON: {exc}") from exc
        for key in ("id", "speaker", "dialect", "split", "frames", "audio_seconds",
                    "transcript_h", "transcript_p", "feature_file", "byte_offset"):
            if key not in rec:
                raise DataError(f"manifest line {line_no} missing field {key!r}")
        if rec["dialect"] not in dialects:
            raise DataError(f"utterance {rec['id']}: unknown dialect {rec['dialect']!r}")
        if rec["split"] not in SPLITS:
            raise DataError(f"utterance {rec['id']}: unknown split {rec['split']!r}")
        feature_file = rec["feature_file"]
        if feature_file not in feature_bytes:
            fpath = os.path.join(data_dir, feature_file)
            if not os.path.exists(fpath):
                raise DataError(f"feature file {feature_file} missing for {rec['id']}")
            with open(fpath, "rb") as feats_in:
                feature_bytes[feature_file] = feats_in.read()
        blob = feature_bytes[feature_file]
        frames = int(rec["frames"])
        begin = int(rec["byte_offset"])
        end = begin + frames * f_dim * 4
        if begin < 0 or end > len(blob):
            raise DataError(
                f"utterance {rec['id']}: features truncated "
                f"(need bytes [{begin}, {end}) of {len(blob)})"
            )
        feats = np.frombuffer(blob[begin:end], dtype="<f4").reshape(frames, f_dim).copy()
        d_index = dialects.index(rec["dialect"])
        splits[rec["split"]].append(
            Utterance(
                id=rec["id"],
                speaker=rec["speaker"],
                dialect=DialectId(d_index, rec["dialect"]),
                split=rec["split"],
                features=feats,
                transcript_h=rec["transcript_h"],
                transcript_p=rec["transcript_p"],
                audio_seconds=float(rec["audio_seconds"]),
            )
        )
    return Dataset(
        dialects=dialects,
        feature_dim=f_dim,
        hanzi_symbols=tuple(header["hanzi_symbols"]),
        pinyin_symbols=tuple(header["pinyin_symbols"]),
        splits=splits,
        lexicon=None,
        frame_shift=float(header.get("frame_shift", FRAME_SHIFT)),
    )


def subset_by_dialect(dataset, dialect_name):
    """Filter every split down to one dialect; vocabulary tables are kept
    so models remain interchangeable with mixed-dialect training."""
    if dialect_name not in dataset.dialects:
        raise DataError(f"unknown dialect {dialect_name!r}; have {dataset.dialects}")
    filtered = {
        name: [utt for utt in utts if utt.dialect.name == dialect_name]
        for name, utts in dataset.splits.items()
    }
    return replace(dataset, splits=filtered)
