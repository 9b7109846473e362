"""Flat run configuration: `key = value` lines with dotted keys.

Every key can be overridden by a same-named command-line flag (for
example ``--train.epochs 20``).  Values are typed per key; booleans
accept true/false/yes/no/1/0.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ConfigError

__all__ = ["RunConfig", "KEY_MAP", "parse_config_file", "load_config", "system_label"]


@dataclass
class RunConfig:
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    results_dir: str = "results"
    encoder_dim: int = 16
    encoder_blocks: int = 2
    encoder_hidden: int = 32
    subsample: int = 4
    predictor_context: int = 2
    embed_dim: int = 16
    joint_dim: int = 16
    epochs: int = 15
    batch_size: int = 8
    lr: float = 0.01
    lam: float = 0.5
    s_range: int = 5
    loss: str = "pruned"
    task: str = "both"
    adc: bool = False
    dii: bool = False
    conditioning: str = "none"
    infer_dialect: str = "adc"
    max_symbols: int = 10
    seed: int = 0

    def validate(self):
        from .dialect import STRATEGIES

        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("train.epochs and train.batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")
        if self.lam < 0:
            raise ConfigError(f"train.lambda must be >= 0, got {self.lam}")
        if self.s_range < 1:
            raise ConfigError(f"train.s_range must be >= 1, got {self.s_range}")
        if self.loss not in ("full", "pruned"):
            raise ConfigError(f"train.loss must be full or pruned, got {self.loss!r}")
        task = {"h": "hanzi", "p": "pinyin"}.get(self.task.lower(), self.task.lower())
        if task not in ("both", "hanzi", "pinyin"):
            raise ConfigError(f"train.task must be both, H, or P, got {self.task!r}")
        self.task = task
        self.conditioning = self.conditioning.lower()
        if self.conditioning not in STRATEGIES:
            raise ConfigError(
                f"dialect.conditioning must be one of {STRATEGIES}, got {self.conditioning!r}"
            )
        infer = self.infer_dialect.lower()
        if infer not in ("adc", "truth") and not _is_int(infer):
            raise ConfigError(
                "dialect.infer_dialect must be adc, truth, or a fixed dialect index"
            )
        self.infer_dialect = infer
        if self.dii and not self.adc and infer == "adc":
            raise ConfigError(
                "dialect.dii without dialect.adc needs dialect.infer_dialect = truth "
                "or a fixed dialect index"
            )
        if self.max_symbols < 1:
            raise ConfigError("decode.max_symbols must be >= 1")
        return self


KEY_MAP = {
    "paths.data_dir": "data_dir",
    "paths.checkpoint_dir": "checkpoint_dir",
    "paths.results_dir": "results_dir",
    "model.encoder_dim": "encoder_dim",
    "model.encoder_blocks": "encoder_blocks",
    "model.encoder_hidden": "encoder_hidden",
    "model.subsample": "subsample",
    "model.predictor_context": "predictor_context",
    "model.embed_dim": "embed_dim",
    "model.joint_dim": "joint_dim",
    "train.epochs": "epochs",
    "train.batch_size": "batch_size",
    "train.lr": "lr",
    "train.lambda": "lam",
    "train.s_range": "s_range",
    "train.loss": "loss",
    "train.task": "task",
    "dialect.adc": "adc",
    "dialect.dii": "dii",
    "dialect.conditioning": "conditioning",
    "dialect.infer_dialect": "infer_dialect",
    "decode.max_symbols": "max_symbols",
    "seed": "seed",
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _is_int(text):
    try:
        int(text)
        return True
    except ValueError:
        return False


def _coerce(key, fname, raw):
    ftype = _FIELD_TYPES[fname]
    raw = raw.strip()
    if ftype == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1"):
            return True
        if low in ("false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a {ftype}, got {raw!r}") from None
    return raw


def parse_config_file(path):
    """Read `key = value` lines; '#' starts a comment, blanks are skipped."""
    values = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {text!r}")
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in KEY_MAP:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            values[key] = raw
    return values


def load_config(path=None, overrides=None):
    """Build a validated RunConfig from an optional file plus overrides
    (a dotted-key -> raw-string map, e.g. from command-line flags)."""
    cfg = RunConfig()
    merged = {}
    if path is not None:
        merged.update(parse_config_file(path))
    for key, raw in (overrides or {}).items():
        if key not in KEY_MAP:
            raise ConfigError(f"unknown config key {key!r}")
        if raw is not None:
            merged[key] = raw
    for key, raw in merged.items():
        fname = KEY_MAP[key]
        setattr(cfg, fname, _coerce(key, fname, str(raw)))
    return cfg.validate()


def system_label(cfg):
    """Short experiment name derived from the active mechanisms."""
    if cfg.task != "both":
        label = f"van_{cfg.task}"
    else:
        label = "mtl"
    extras = []
    if cfg.adc:
        extras.append("adc")
    if cfg.dii:
        extras.append("dii")
    if cfg.conditioning != "none":
        extras.append(cfg.conditioning)
    return "+".join([label] + extras) if extras else label
