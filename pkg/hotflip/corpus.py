"""Dataset loading and one-hot text encoding."""

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hotflip.config import substream
from hotflip.errors import ConfigError, ContractError, DegenerateInputError, EncodeError, ParseError

logger = logging.getLogger(__name__)

PAD_SYMBOL = "\x00"
PAD_WORD = "<pad>"
UNK_WORD = "<unk>"


@dataclass(frozen=True)
class Alphabet:
    """Ordered character set; index 0 is the padding symbol."""

    symbols: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != PAD_SYMBOL:
            raise ContractError("alphabet must start with the padding symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ContractError("alphabet symbols must be unique")
        object.__setattr__(self, "_index", {ch: i for i, ch in enumerate(self.symbols)})

    pad_index = 0

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, char: str) -> bool:
        return char in self._index

    def index(self, char: str) -> int:
        try:
            return self._index[char]
        except KeyError:
            raise EncodeError(char) from None

    def char(self, index: int) -> str:
        return self.symbols[index]


@dataclass(frozen=True, eq=False)
class OneHotText:
    """A document as an m x n grid of character indices.

    The dense m x n x |V| one-hot tensor is built on demand by ``onehot()``.
    Position j of word i holds padding whenever j >= lengths[i].
    """

    chars: np.ndarray  # (m, n) int64
    lengths: np.ndarray  # (m,) int64
    num_words: int
    alphabet: Alphabet

    @property
    def m(self) -> int:
        return self.chars.shape[0]

    @property
    def n(self) -> int:
        return self.chars.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.m, self.n, self.alphabet.size)

    def onehot(self) -> np.ndarray:
        dense = np.zeros(self.shape)
        rows, cols = np.indices(self.chars.shape)
        dense[rows, cols, self.chars] = 1.0
        return dense

    def word(self, i: int) -> str:
        return "".join(self.alphabet.char(c) for c in self.chars[i, : self.lengths[i]])

    def words(self) -> list[str]:
        return [self.word(i) for i in range(self.num_words)]

    def decode(self) -> str:
        return " ".join(self.words())

    def character_count(self) -> int:
        """Non-padding, non-space characters in the document."""
        return int(self.lengths[: self.num_words].sum())

    def key(self) -> bytes:
        return self.chars.tobytes()

    def with_word(self, i: int, indices: Sequence[int]) -> "OneHotText":
        """Copy with word ``i`` replaced by the given character indices."""
        if len(indices) > self.n - 1:
            raise ContractError(f"word of length {len(indices)} does not fit n={self.n}")
        chars = self.chars.copy()
        chars[i, :] = self.alphabet.pad_index
        chars[i, : len(indices)] = indices
        lengths = self.lengths.copy()
        lengths[i] = len(indices)
        chars.setflags(write=False)
        lengths.setflags(write=False)
        return OneHotText(chars, lengths, self.num_words, self.alphabet)


@dataclass(frozen=True, eq=False)
class WordSequence:
    """A sentence as word-vocabulary indices, padded to a minimum length."""

    ids: np.ndarray  # (length,) int64
    tokens: tuple[str, ...]

    @property
    def length(self) -> int:
        return len(self.tokens)

    def onehot(self, vocab_size: int) -> np.ndarray:
        dense = np.zeros((len(self.ids), vocab_size))
        dense[np.arange(len(self.ids)), self.ids] = 1.0
        return dense

    def with_token(self, position: int, token: str, index: int) -> "WordSequence":
        ids = self.ids.copy()
        ids[position] = index
        ids.setflags(write=False)
        tokens = list(self.tokens)
        tokens[position] = token
        return WordSequence(ids, tuple(tokens))


@dataclass(frozen=True, eq=False)
class LabeledExample:
    """Raw text, its class index and (after encoding) its model input."""

    text: str
    label: int
    x: OneHotText | WordSequence | None = None
    uid: int = 0

    @property
    def tokens(self) -> list[str]:
        return self.text.split()

    def with_input(self, x: OneHotText | WordSequence) -> "LabeledExample":
        return replace(self, x=x)


@dataclass(frozen=True)
class WordVocab:
    """Words observed in training data, used by the vocabulary constraint."""

    words: frozenset[str]
    lowercase: bool = True

    def __contains__(self, word: str) -> bool:
        return (word.lower() if self.lowercase else word) in self.words

    def __len__(self) -> int:
        return len(self.words)


@dataclass(frozen=True)
class WordIndex:
    """Word-model vocabulary: PAD=0, UNK=1, then words by frequency."""

    words: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    pad_index = 0
    unk_index = 1

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index(self, word: str) -> int:
        return self._index.get(word, self.unk_index)


def normalize(text: str, max_words: int, max_chars: int, lowercase: bool = True) -> str:
    """Canonical form of ``text`` under the encoding limits."""
    if lowercase:
        text = text.lower()
    words = [w[: max_chars - 1] for w in text.split()[:max_words]]
    return " ".join(words)


def encode(
    text: str,
    alphabet: Alphabet,
    n: int,
    m: int,
    lowercase: bool = True,
) -> OneHotText:
    """Encode text as an m x n character grid."""
    if n < 2:
        raise DegenerateInputError("n must leave one trailing padding slot")
    words = normalize(text, m, n, lowercase).split()
    chars = np.full((m, n), alphabet.pad_index, dtype=np.int64)
    lengths = np.zeros(m, dtype=np.int64)
    for i, word in enumerate(words):
        chars[i, : len(word)] = [alphabet.index(ch) for ch in word]
        lengths[i] = len(word)
    chars.setflags(write=False)
    lengths.setflags(write=False)
    return OneHotText(chars, lengths, len(words), alphabet)


def decode(x: OneHotText) -> str:
    return x.decode()


def encode_words(tokens: Sequence[str], index: WordIndex, min_length: int) -> WordSequence:
    """Encode a token list for the word model, padding to ``min_length``."""
    if not tokens:
        raise DegenerateInputError("cannot encode an empty sentence")
    ids = [index.index(token) for token in tokens]
    ids += [index.pad_index] * max(0, min_length - len(ids))
    array = np.array(ids, dtype=np.int64)
    array.setflags(write=False)
    return WordSequence(array, tuple(tokens))


def _corpus_texts(corpus: Iterable[str | LabeledExample]) -> list[str]:
    return [item.text if isinstance(item, LabeledExample) else item for item in corpus]


def build_alphabet(corpus: Iterable[str | LabeledExample]) -> Alphabet:
    """Alphabet covering every non-space character of the corpus plus padding."""
    texts = _corpus_texts(corpus)
    if not texts:
        raise DegenerateInputError("cannot build an alphabet from an empty corpus")
    chars = set()
    for text in texts:
        chars.update("".join(text.split()))
    chars.discard(PAD_SYMBOL)
    return Alphabet((PAD_SYMBOL, *sorted(chars)))


def build_word_vocab(corpus: Iterable[str | LabeledExample], lowercase: bool = True) -> WordVocab:
    """Every whitespace-delimited token of the corpus."""
    texts = _corpus_texts(corpus)
    if not texts:
        raise DegenerateInputError("cannot build a vocabulary from an empty corpus")
    words = set()
    for text in texts:
        words.update(text.lower().split() if lowercase else text.split())
    return WordVocab(frozenset(words), lowercase)


def build_word_index(corpus: Iterable[str | LabeledExample], max_size: int) -> WordIndex:
    """Most frequent tokens first; ties broken alphabetically."""
    texts = _corpus_texts(corpus)
    if not texts:
        raise DegenerateInputError("cannot build a vocabulary from an empty corpus")
    counts = Counter(token for text in texts for token in text.split())
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    words = [word for word, _ in ranked[: max(0, max_size - 2)]]
    return WordIndex((PAD_WORD, UNK_WORD, *words))


def load_agnews(path: str | Path, lowercase: bool = True) -> list[LabeledExample]:
    """Load the 3-column AG-news CSV: class (1-4), title, description."""
    path = Path(path)
    examples = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        for row in reader:
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(str(path), reader.line_num, f"expected 3 fields, found {len(row)}")
            klass, title, description = row
            try:
                label = int(klass)
            except ValueError:
                raise ParseError(str(path), reader.line_num, f"class {klass!r} is not an integer") from None
            if not 1 <= label <= 4:
                raise ParseError(str(path), reader.line_num, f"class {label} outside 1-4")
            # AG-news escapes embedded newlines as a literal backslash sequence
            text = f"{title} {description}".replace("\\n", " ").replace("\\", " ")
            text = " ".join(text.split())
            if lowercase:
                text = text.lower()
            examples.append(LabeledExample(text=text, label=label - 1, uid=len(examples)))
    logger.info("Loaded %d AG-news examples from %s", len(examples), path)
    return examples


def load_sst_binary(path: str | Path, lowercase: bool = True) -> list[LabeledExample]:
    """Load ``<label>\\t<sentence>`` lines with labels 0 (negative) and 1 (positive)."""
    path = Path(path)
    examples = []
    skipped = 0
    with open(path, encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, 1):
            line = line.rstrip("\n")
            if not line.strip():
                skipped += 1
                continue
            label_text, sep, sentence = line.partition("\t")
            if not sep:
                raise ParseError(str(path), line_number, "missing tab separator")
            if label_text.strip() not in ("0", "1"):
                raise ParseError(str(path), line_number, f"label {label_text!r} not in {{0, 1}}")
            tokens = (sentence.lower() if lowercase else sentence).split()
            if not tokens:
                raise ParseError(str(path), line_number, "empty sentence")
            examples.append(
                LabeledExample(text=" ".join(tokens), label=int(label_text), uid=len(examples))
            )
    if skipped:
        logger.warning("Skipped %d empty lines in %s", skipped, path)
    logger.info("Loaded %d SST examples from %s", len(examples), path)
    return examples


def dev_split(
    examples: Sequence[LabeledExample],
    fraction: float,
    seed: int,
) -> tuple[list[LabeledExample], list[LabeledExample]]:
    """Deterministic train/dev partition; both halves keep the input order."""
    if not 0 < fraction < 1:
        raise ConfigError([f"dev fraction must lie in (0, 1), got {fraction}"])
    rng = substream(seed, "split")
    order = rng.permutation(len(examples))
    dev_size = int(round(len(examples) * fraction))
    dev_ids = set(order[:dev_size].tolist())
    train = [ex for i, ex in enumerate(examples) if i not in dev_ids]
    dev = [ex for i, ex in enumerate(examples) if i in dev_ids]
    return train, dev


def encode_examples(
    examples: Iterable[LabeledExample],
    alphabet: Alphabet,
    n: int,
    m: int,
    lowercase: bool = True,
) -> list[LabeledExample]:
    """Attach one-hot inputs to every example."""
    return [ex.with_input(encode(ex.text, alphabet, n, m, lowercase)) for ex in examples]


def encode_word_examples(
    examples: Iterable[LabeledExample],
    index: WordIndex,
    min_length: int,
) -> list[LabeledExample]:
    return [ex.with_input(encode_words(ex.tokens, index, min_length)) for ex in examples]


def document_characters(x: OneHotText) -> int:
    """Budget base: non-padding, non-space characters."""
    return x.character_count()
