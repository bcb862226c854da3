"""Lexical resources for word-level attacks: vectors, POS lexicon, stemmer, stop words."""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from hotflip.errors import ParseError

logger = logging.getLogger(__name__)

UNKNOWN_TAG = "UNK"
DEFAULT_STOPWORDS = Path(__file__).parent / "resources" / "stopwords.txt"


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector is zero."""
    norms = np.linalg.norm(u) * np.linalg.norm(v)
    if norms == 0:
        return 0.0
    return float(np.dot(u, v) / norms)


@dataclass(frozen=True)
class EmbeddingTable:
    """Word vectors in file order."""

    words: tuple[str, ...]
    vectors: np.ndarray  # (len(words), dim)
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    @property
    def dimensions(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def vector(self, word: str) -> Optional[np.ndarray]:
        index = self._index.get(word)
        return None if index is None else self.vectors[index]

    def similarity(self, a: str, b: str) -> Optional[float]:
        """Cosine of two words, or None when either has no vector."""
        u, v = self.vector(a), self.vector(b)
        if u is None or v is None:
            return None
        return cosine(u, v)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {word: self.vectors[i] for i, word in enumerate(self.words)}

    @classmethod
    def from_model(cls, words: Iterable[str], matrix: np.ndarray) -> "EmbeddingTable":
        """Table over a model's own embedding rows."""
        return cls(tuple(words), np.array(matrix, dtype=np.float64))


def load_embeddings(path: str | Path) -> EmbeddingTable:
    """Read ``word v1 ... vd`` lines, with an optional ``count dim`` header.

    Args:
        path: UTF-8 text file of word vectors.

    Returns:
        The loaded table. The first occurrence of a repeated word wins.
    """
    path = Path(path)
    words: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    dim: Optional[int] = None
    declared: Optional[int] = None

    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if line_number == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                declared, dim = int(parts[0]), int(parts[1])
                continue
            word, values = parts[0], parts[1:]
            if dim is None:
                dim = len(values)
            if len(values) != dim or dim == 0:
                raise ParseError(str(path), line_number, f"expected {dim} values, found {len(values)}")
            try:
                vector = [float(v) for v in values]
            except ValueError:
                raise ParseError(str(path), line_number, "non-numeric vector component") from None
            if word in seen:
                continue
            seen.add(word)
            words.append(word)
            rows.append(vector)

    if declared is not None and declared != len(words):
        logger.warning("%s declares %d vectors but holds %d", path, declared, len(words))
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim or 0)
    logger.info("Loaded %d vectors of dimension %d from %s", len(words), dim or 0, path)
    return EmbeddingTable(tuple(words), vectors)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> Path:
    """Write a table in the format ``load_embeddings`` reads, header included."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{len(table)} {table.dimensions}\n")
        for word, vector in zip(table.words, table.vectors):
            handle.write(word + " " + " ".join(repr(float(v)) for v in vector) + "\n")
    return path


class PosLexicon:
    """Word to part-of-speech tag, from a ``word<TAB>tag`` file."""

    def __init__(self, tags: dict[str, str] | None = None):
        self.tags = dict(tags or {})

    @classmethod
    def load(cls, path: str | Path) -> "PosLexicon":
        path = Path(path)
        tags: dict[str, str] = {}
        with open(path, encoding="utf-8") as handle:
            for line_number, line in enumerate(handle, 1):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                word, sep, tag = line.partition("\t")
                if not sep or not word or not tag.strip():
                    raise ParseError(str(path), line_number, "expected word<TAB>tag")
                tags.setdefault(word, tag.strip())
        logger.info("Loaded %d lexicon entries from %s", len(tags), path)
        return cls(tags)

    def tag(self, word: str) -> str:
        return self.tags.get(word, UNKNOWN_TAG)

    def __len__(self) -> int:
        return len(self.tags)


def pos_tag(word: str, lexicon: PosLexicon) -> str:
    return lexicon.tag(word)


class Stemmer:
    """Porter suffix stripping, loaded on first use."""

    def __init__(self):
        self._stemmer = None

    def _load(self) -> None:
        if self._stemmer is None:
            try:
                from nltk.stem import PorterStemmer
            except ImportError:
                raise ImportError("nltk is required for lexeme checks. Install with: pip install nltk")
            self._stemmer = PorterStemmer()

    def stem(self, word: str) -> str:
        self._load()
        return self._stemmer.stem(word.lower())


_stemmer = Stemmer()


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    """Lexeme key of ``word``."""
    return _stemmer.stem(word)


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    """One word per line; blank lines and ``#`` comments are ignored."""
    path = Path(path) if path else DEFAULT_STOPWORDS
    with open(path, encoding="utf-8") as handle:
        words = {line.strip().lower() for line in handle if line.strip() and not line.startswith("#")}
    return frozenset(words)
