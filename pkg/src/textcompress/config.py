"""Run configuration: INI files with sections, overridable field by field."""

from __future__ import annotations

import configparser
import dataclasses
import os
from io import StringIO
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .fusion import FusionMode, check_task_compat
from .transformer import ModelConfig

TASKS = ("translate", "compress", "span", "choice")
MANNERS = ("none", "etc-pipeline", "etc-joint", "itc-joint")
SETTINGS = ("supervised", "unsupervised", "semi")
SEED_ENV = "TEXTCOMPRESS_SEED"

# which INI section each field lives in
SECTIONS = {
    "run": ("task", "manner", "fusion", "setting", "seed", "baseline", "span_verifier"),
    "compression": ("gamma", "alpha", "beta", "beam", "independent_encoder", "additive_fraction",
                    "dropout_p", "shuffle_level"),
    "model": ("layers", "d_model", "d_ff", "heads", "max_len", "attn_scale", "nat_layers", "nat_d_model",
              "nat_d_ff", "nat_heads"),
    "optim": ("lr", "batch_size", "epochs", "compressor_epochs", "unsup_epochs", "itc_pretrain_epochs",
              "joint_warmup_epochs", "warmup_steps", "clip_norm"),
    "paths": ("train", "test", "compression_pairs", "corpus", "vocab", "out_dir", "resume"),
}


def default_seed() -> int:
    try:
        return int(os.environ.get(SEED_ENV, "0"))
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer") from None


@dataclass
class RunConfig:
    task: str = "translate"
    manner: str = "none"
    fusion: str = "none"
    setting: str = "supervised"
    seed: int = field(default_factory=default_seed)
    # compression baseline replacing a trained compressor: none|alltext|f8w|randsample
    baseline: str = "none"
    # span task: let the answerability verifier also veto answers, besides the (0, 0) pointer
    span_verifier: bool = False

    gamma: float | None = None
    alpha: float = 0.5
    beta: float = 0.2
    beam: int = 5
    independent_encoder: bool = False
    additive_fraction: float = 0.5
    dropout_p: float = 0.1
    shuffle_level: str = "token"

    layers: int = 2
    d_model: int = 128
    d_ff: int = 512
    heads: int = 4
    max_len: int = 256
    attn_scale: str = "d_k"
    nat_layers: int = 2
    nat_d_model: int = 128
    nat_d_ff: int = 512
    nat_heads: int = 4

    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    compressor_epochs: int = 10
    unsup_epochs: int = 5
    itc_pretrain_epochs: int = 5
    joint_warmup_epochs: int = 3
    warmup_steps: int = 100
    clip_norm: float = 1.0

    train: str | None = None
    test: str | None = None
    compression_pairs: str | None = None
    corpus: str | None = None
    vocab: str | None = None
    out_dir: str | None = None
    resume: str | None = None

    @property
    def effective_gamma(self) -> float:
        if self.gamma is not None:
            return self.gamma
        return 0.4 if self.manner == "itc-joint" else 0.6

    @property
    def uses_compressor(self) -> bool:
        return self.manner in ("etc-pipeline", "etc-joint") and self.baseline == "none"

    def validate(self) -> "RunConfig":
        def one_of(name, options):
            if getattr(self, name) not in options:
                raise ConfigError(f"{name}={getattr(self, name)!r}; expected one of {', '.join(options)}")

        one_of("task", TASKS)
        one_of("manner", MANNERS)
        one_of("setting", SETTINGS)
        one_of("baseline", ("none", "alltext", "f8w", "randsample"))
        one_of("shuffle_level", ("token", "sentence"))
        mode = FusionMode.parse(self.fusion)
        self.fusion = mode.value
        check_task_compat(mode, encoder_decoder=self.task == "translate")
        if self.task == "compress" and (self.manner != "none" or mode is not FusionMode.NONE):
            raise ConfigError("the compress task trains a compressor alone; use manner=none fusion=none")
        if self.manner == "none" and mode is not FusionMode.NONE:
            raise ConfigError(f"fusion {mode.value} needs a compression manner or baseline")
        if self.manner != "none" and mode is FusionMode.NONE:
            raise ConfigError(f"manner {self.manner} needs a fusion mode")
        if self.baseline != "none" and self.manner != "etc-pipeline":
            raise ConfigError("compression baselines replace the pipeline compressor; use manner=etc-pipeline")
        if not 0.0 < self.effective_gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.beam < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("beam, batch_size must be >= 1 and epochs >= 0")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be >= 0")
        if self.d_model % self.heads or self.nat_d_model % self.nat_heads:
            raise ConfigError("model widths must be divisible by head counts")
        return self

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, self.layers, self.d_model, self.d_ff, self.heads, self.max_len,
                           self.attn_scale)

    def nat_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, self.nat_layers, self.nat_d_model, self.nat_d_ff, self.nat_heads,
                           self.max_len, self.attn_scale)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # -- INI round trip ---------------------------------------------------

    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        for section, names in SECTIONS.items():
            parser[section] = {n: "" if getattr(self, n) is None else str(getattr(self, n)) for n in names}
        buf = StringIO()
        parser.write(buf)
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini(), encoding="utf-8")

    @classmethod
    def from_ini(cls, text: str, **overrides) -> "RunConfig":
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from exc
        types = {f.name: f.type for f in fields(cls)}
        known = {n: s for s, names in SECTIONS.items() for n in names}
        values = {}
        for section in parser.sections():
            for key, raw in parser[section].items():
                if key not in known or known[key] != section:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                values[key] = _coerce(key, raw, types[key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_ini(text, **overrides)


def _coerce(name: str, raw: str, typ) -> object:
    typ = str(typ)
    raw = raw.strip()
    if raw == "" and "None" in typ:
        return None
    try:
        if typ.startswith("bool"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if typ.startswith("int"):
            return int(raw)
        if typ.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw
