"""HOTFLIP1 checkpoint files.

Layout: the magic line ``HOTFLIP1\\n``, one line of JSON header (architecture
hyperparameters, alphabet or vocabulary, tensor names/shapes/offsets), then the
tensors as concatenated little-endian float64 arrays.
"""

import hashlib
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from hotflip.classifiers import CharClassifier, Classifier, WordClassifier
from hotflip.config import CharModelConfig, EncodingConfig, WordModelConfig
from hotflip.corpus import Alphabet, WordIndex
from hotflip.errors import CheckpointError, HotflipError
from hotflip.models import CheckpointHeader, TensorEntry

MAGIC = b"HOTFLIP1\n"
_DTYPE = np.dtype("<f8")


def save_checkpoint(model: Classifier, path: str | Path) -> Path:
    """Write ``model`` to ``path``; returns the path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries = []
    offset = 0
    for name in sorted(model.params):
        value = model.params[name]
        entries.append(TensorEntry(name=name, shape=list(value.shape), offset=offset, count=int(value.size)))
        offset += value.size * _DTYPE.itemsize

    if isinstance(model, CharClassifier):
        header = CheckpointHeader(
            arch="char",
            hyperparameters=asdict(model.config),
            encoding=asdict(model.encoding),
            alphabet=list(model.alphabet.symbols),
            tensors=entries,
        )
    elif isinstance(model, WordClassifier):
        hyper = asdict(model.config)
        hyper["kernel_widths"] = list(model.config.kernel_widths)
        header = CheckpointHeader(
            arch="word",
            hyperparameters=hyper,
            vocabulary=list(model.vocab.words),
            tensors=entries,
        )
    else:
        raise CheckpointError(f"cannot save model of type {type(model).__name__}")

    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(json.dumps(header.model_dump(), sort_keys=True, ensure_ascii=True).encode("ascii"))
        handle.write(b"\n")
        for entry in entries:
            handle.write(np.ascontiguousarray(model.params[entry.name], dtype=_DTYPE).tobytes())
    return path


def load_checkpoint(path: str | Path) -> Classifier:
    """Read a model written by ``save_checkpoint``."""
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: missing HOTFLIP1 magic")
    header_end = raw.find(b"\n", len(MAGIC))
    if header_end < 0:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = CheckpointHeader.model_validate(json.loads(raw[len(MAGIC) : header_end]))
    except (json.JSONDecodeError, ValidationError) as exc:
        raise CheckpointError(f"{path}: bad header: {exc}") from exc

    body = raw[header_end + 1 :]
    params = {}
    for entry in header.tensors:
        end = entry.offset + entry.count * _DTYPE.itemsize
        if end > len(body):
            raise CheckpointError(f"{path}: tensor {entry.name} runs past the end of the file")
        array = np.frombuffer(body, dtype=_DTYPE, count=entry.count, offset=entry.offset)
        try:
            params[entry.name] = array.reshape(entry.shape).astype(np.float64)
        except ValueError:
            raise CheckpointError(f"{path}: tensor {entry.name} has {entry.count} values, not shape {entry.shape}") from None

    try:
        return _build(header, params)
    except (HotflipError, TypeError, KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: inconsistent header: {exc}") from exc


def _build(header: CheckpointHeader, params: dict[str, np.ndarray]) -> Classifier:
    if header.arch == "char":
        if header.alphabet is None or header.encoding is None:
            raise CheckpointError("char checkpoint without alphabet or encoding")
        return CharClassifier(
            CharModelConfig(**header.hyperparameters),
            Alphabet(tuple(header.alphabet)),
            EncodingConfig(**header.encoding),
            params,
        )
    if header.vocabulary is None:
        raise CheckpointError("word checkpoint without vocabulary")
    hyper = dict(header.hyperparameters)
    hyper["kernel_widths"] = tuple(hyper["kernel_widths"])
    return WordClassifier(WordModelConfig(**hyper), WordIndex(tuple(header.vocabulary)), params)


def checkpoint_digest(path: str | Path) -> str:
    """SHA-256 of the checkpoint file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
