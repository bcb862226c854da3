"""Configuration management for the HotFlip toolkit."""

import hashlib
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from hotflip.errors import ConfigError

EDIT_KINDS = ("flip", "insert", "delete")
ADV_METHODS = ("hotflip-white", "keystar-black", "embed-noise", "none")


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        raise ConfigError([f"{name} must be an integer, got {value!r}"]) from None


def _env_flag(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "on"}


@dataclass
class Config:
    """Environment-level settings shared by every subcommand."""

    # Paths
    data_dir: Path
    output_dir: Path

    # Reproducibility
    seed: int = 13

    # Text encoding
    max_words: int = 40
    max_chars: int = 16
    lowercase: bool = True

    # Parallel attack workers
    jobs: int = 1

    @classmethod
    def from_env(cls, env_path: str | None = None) -> "Config":
        """Load configuration from environment variables."""
        if env_path:
            load_dotenv(env_path)
        else:
            load_dotenv()

        project_root = Path(__file__).parent.parent
        data_dir = Path(os.getenv("HOTFLIP_DATA_DIR", str(project_root / "data")))
        output_dir = Path(os.getenv("HOTFLIP_OUTPUT_DIR", str(project_root / "runs")))

        return cls(
            data_dir=data_dir,
            output_dir=output_dir,
            seed=_env_int("HOTFLIP_SEED", 13),
            max_words=_env_int("HOTFLIP_MAX_WORDS", 40),
            max_chars=_env_int("HOTFLIP_MAX_CHARS", 16),
            lowercase=_env_flag("HOTFLIP_LOWERCASE", True),
            jobs=_env_int("HOTFLIP_JOBS", 1),
        )

    def to_dict(self) -> dict:
        """JSON-friendly snapshot, stored with every run."""
        values = asdict(self)
        values["data_dir"] = str(self.data_dir)
        values["output_dir"] = str(self.output_dir)
        return values

    @classmethod
    def from_dict(cls, values: dict) -> "Config":
        """Rebuild a snapshot written by ``to_dict``."""
        try:
            return cls(
                **{
                    **values,
                    "data_dir": Path(values["data_dir"]),
                    "output_dir": Path(values["output_dir"]),
                }
            )
        except (KeyError, TypeError) as e:
            raise ConfigError([f"bad environment snapshot: {e}"]) from None

    def resolve_data(self, path: str | Path) -> Path:
        """Resolve a relative dataset path against the data root."""
        path = Path(path)
        if path.is_absolute() or path.exists():
            return path
        return self.data_dir / path

    def validate(self) -> list[str]:
        """Validate configuration and return list of errors."""
        errors = []

        if self.max_words < 1:
            errors.append("HOTFLIP_MAX_WORDS must be at least 1")
        if self.max_chars < 2:
            errors.append("HOTFLIP_MAX_CHARS must be at least 2 (one slot is reserved for padding)")
        if self.jobs < 1:
            errors.append("HOTFLIP_JOBS must be at least 1")

        return errors


@dataclass
class EncodingConfig:
    """Shape of the one-hot text tensor."""

    max_words: int = 40  # m
    max_chars: int = 16  # n, one trailing slot always padding
    lowercase: bool = True

    def validate(self) -> list[str]:
        errors = []
        if self.max_words < 1:
            errors.append("max_words must be at least 1")
        if self.max_chars < 2:
            errors.append("max_chars must be at least 2")
        return errors


@dataclass
class CharModelConfig:
    """Desk-scale CharCNN-highway-LSTM sizes."""

    char_dim: int = 16
    kernel_width: int = 5
    kernel_count: int = 64
    highway_layers: int = 1
    hidden_size: int = 64
    lstm_layers: int = 1
    num_classes: int = 4
    init_scale: float = 0.1

    def validate(self) -> list[str]:
        errors = []
        for name in ("char_dim", "kernel_width", "kernel_count", "hidden_size", "num_classes"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be at least 1")
        if self.highway_layers < 0:
            errors.append("highway_layers must be non-negative")
        if self.lstm_layers < 1:
            errors.append("lstm_layers must be at least 1")
        return errors


@dataclass
class WordModelConfig:
    """Kim-style convolutional sentence classifier sizes."""

    word_dim: int = 50
    kernel_widths: tuple[int, ...] = (3, 4, 5)
    kernels_per_width: int = 25
    num_classes: int = 2
    max_vocab: int = 20000
    init_scale: float = 0.25

    @property
    def min_length(self) -> int:
        return max(self.kernel_widths)

    def validate(self) -> list[str]:
        errors = []
        if not self.kernel_widths or min(self.kernel_widths) < 1:
            errors.append("kernel_widths must be non-empty positive integers")
        if self.kernels_per_width < 1:
            errors.append("kernels_per_width must be at least 1")
        if self.word_dim < 1:
            errors.append("word_dim must be at least 1")
        if self.max_vocab < 3:
            errors.append("max_vocab must leave room for PAD, UNK and one word")
        if self.init_scale <= 0:
            errors.append("init_scale must be positive")
        return errors


@dataclass
class TrainConfig:
    """Mini-batch SGD settings."""

    batch_size: int = 64
    learning_rate: float = 0.1
    clip_threshold: float = 5.0
    max_epochs: int = 25
    patience: int = 5
    seed: int = 13

    def validate(self) -> list[str]:
        errors = []
        if self.batch_size < 1:
            errors.append("batch_size must be at least 1")
        if self.clip_threshold <= 0:
            errors.append("clip_threshold must be positive")
        if self.learning_rate <= 0:
            errors.append("learning_rate must be positive")
        if self.max_epochs < 0:
            errors.append("max_epochs must be non-negative")
        if self.patience < 1:
            errors.append("patience must be at least 1")
        return errors


@dataclass
class AttackConfig:
    """Search settings for the character-level adversaries."""

    beam_width: int = 10
    budget: float = 0.10  # max fraction of document characters
    edit_kinds: tuple[str, ...] = EDIT_KINDS
    tau: float = 0.5
    vocab_constraint: bool = True
    seed: int = 13
    keystar_queries: int = 20
    max_steps: int | None = None
    check_every_step: bool = True

    def validate(self) -> list[str]:
        errors = []
        if self.beam_width < 1:
            errors.append("beam_width must be at least 1")
        if not 0 <= self.budget <= 1:
            errors.append("budget must lie in [0, 1]")
        if not 0 <= self.tau < 1:
            errors.append("tau must lie in [0, 1)")
        unknown = [kind for kind in self.edit_kinds if kind not in EDIT_KINDS]
        if unknown:
            errors.append(f"unknown edit kinds: {', '.join(unknown)}")
        if not self.edit_kinds:
            errors.append("at least one edit kind is required")
        if self.keystar_queries < 1:
            errors.append("keystar_queries must be at least 1")
        if self.max_steps is not None and self.max_steps < 0:
            errors.append("max_steps must be non-negative")
        return errors

    def digest(self) -> str:
        """Short stable hash identifying this configuration in reports."""
        payload = repr(sorted(asdict(self).items())).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:12]


@dataclass
class AdvTrainConfig:
    """Adversarial training settings."""

    method: str = "hotflip-white"
    flip_fraction: float = 0.20  # r_train
    noise_scale: float = 0.05
    mixing: str = "concat"  # concat or alternate
    vocab_constraint: bool = False
    keystar_queries: int = 20

    def validate(self) -> list[str]:
        errors = []
        if self.method not in ADV_METHODS:
            errors.append(f"method must be one of {', '.join(ADV_METHODS)}")
        if not 0 <= self.flip_fraction <= 1:
            errors.append("flip_fraction must lie in [0, 1]")
        if self.noise_scale < 0:
            errors.append("noise_scale must be non-negative")
        if self.mixing not in ("concat", "alternate"):
            errors.append("mixing must be concat or alternate")
        return errors


@dataclass
class WordConstraintConfig:
    """Semantics-preserving constraints for word substitutions."""

    cosine_threshold: float = 0.8
    lexicon_path: Path | None = None
    stopwords_path: Path | None = None
    protect_target_stopwords: bool = True
    use_model_embeddings: bool = False
    beam_width: int = 10
    max_flips: int = 2

    def validate(self) -> list[str]:
        errors = []
        if not -1 <= self.cosine_threshold <= 1:
            errors.append("cosine_threshold must lie in [-1, 1]")
        if self.beam_width < 1:
            errors.append("beam_width must be at least 1")
        if self.max_flips < 0:
            errors.append("max_flips must be non-negative")
        return errors


def require_valid(*configs) -> None:
    """Raise ConfigError when any config reports problems."""
    problems: list[str] = []
    for config in configs:
        problems.extend(config.validate())
    if problems:
        raise ConfigError(problems)


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for a named consumer of the run seed."""
    tag = int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")
    return np.random.default_rng(np.random.SeedSequence([seed, tag, *keys]))

