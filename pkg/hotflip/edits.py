"""Character edits on one-hot text: enumeration, first-order scoring and application.

Every edit is a set of atomic flips ``(position, from, to)`` inside one word.
A flip replaces one character; an insert shifts the tail of the word right by
one slot; a delete shifts it left and turns the last occupied slot into
padding. Slots whose character is unchanged by the shift are not flips.
"""

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from hotflip.classifiers import GradientField
from hotflip.config import EDIT_KINDS, AttackConfig
from hotflip.corpus import Alphabet, OneHotText, WordVocab
from hotflip.errors import ContractError, DimensionError
from hotflip.models import EditSummary

KIND_CODES = {"flip": 0, "insert": 1, "delete": 2}
NO_CHAR = -1

Flip = tuple[int, int, int]


@dataclass(frozen=True, slots=True)
class EditOp:
    """One character edit of word ``word`` at slot ``position``."""

    kind: str
    word: int
    position: int
    char: int  # target character index; NO_CHAR for delete
    flips: tuple[Flip, ...]
    result: tuple[int, ...]  # character indices of the edited word

    @property
    def num_flips(self) -> int:
        return len(self.flips)

    def sort_key(self) -> tuple[int, int, int, int]:
        return (KIND_CODES[self.kind], self.word, self.position, self.char)

    def summary(self, alphabet: Alphabet, score: float = 0.0) -> EditSummary:
        return EditSummary(
            kind=self.kind,
            word=self.word,
            position=self.position,
            char=None if self.char == NO_CHAR else alphabet.char(self.char),
            flips=self.num_flips,
            score=score,
        )


@dataclass(frozen=True, slots=True)
class ScoredEdit:
    edit: EditOp
    raw: float
    normalized: float


@dataclass(frozen=True)
class WordEdits:
    """All legal edits of one word, independent of where the word sits."""

    kinds: np.ndarray
    positions: np.ndarray
    chars: np.ndarray
    results: tuple[tuple[int, ...], ...]
    counts: np.ndarray  # flips per edit
    entry_edit: np.ndarray
    entry_pos: np.ndarray
    entry_from: np.ndarray
    entry_to: np.ndarray

    def __len__(self) -> int:
        return len(self.results)


def _shift_flips(old: Sequence[int], new: Sequence[int], start: int, stop: int, pad: int) -> list[Flip]:
    flips = []
    for k in range(start, stop):
        before = old[k] if k < len(old) else pad
        after = new[k] if k < len(new) else pad
        if before != after:
            flips.append((k, before, after))
    return flips


class EditCatalog:
    """Enumerates legal edits word by word, caching per distinct word.

    A catalog is bound to one alphabet, word capacity, vocabulary and set of
    edit kinds; beam states share most words, so the cache does most of the work.
    """

    def __init__(
        self,
        alphabet: Alphabet,
        max_chars: int,
        vocab: WordVocab | None = None,
        kinds: Iterable[str] = EDIT_KINDS,
        vocab_constraint: bool = True,
    ):
        self.alphabet = alphabet
        self.max_chars = max_chars
        self.vocab = vocab if vocab_constraint else None
        self.kinds = tuple(kind for kind in EDIT_KINDS if kind in set(kinds))
        self._targets = list(range(1, alphabet.size))
        self._cache: dict[tuple[int, ...], WordEdits] = {}

    @classmethod
    def for_attack(cls, alphabet: Alphabet, max_chars: int, vocab: WordVocab | None, config: AttackConfig):
        return cls(alphabet, max_chars, vocab, config.edit_kinds, config.vocab_constraint)

    def _allowed(self, result: tuple[int, ...]) -> bool:
        if self.vocab is None:
            return True
        return "".join(self.alphabet.symbols[c] for c in result) not in self.vocab

    def word_edits(self, word: Sequence[int]) -> WordEdits:
        word = tuple(int(c) for c in word)
        cached = self._cache.get(word)
        if cached is None:
            cached = self._build(word)
            self._cache[word] = cached
        return cached

    def _build(self, word: tuple[int, ...]) -> WordEdits:
        length = len(word)
        pad = self.alphabet.pad_index
        rows: list[tuple[int, int, int, tuple[int, ...], list[Flip]]] = []

        if "flip" in self.kinds:
            for j in range(length):
                for b in self._targets:
                    if b == word[j]:
                        continue
                    result = word[:j] + (b,) + word[j + 1 :]
                    if self._allowed(result):
                        rows.append((0, j, b, result, [(j, word[j], b)]))

        if "insert" in self.kinds and length + 1 <= self.max_chars - 1:
            seen = set()
            for j in range(length + 1):
                for b in self._targets:
                    result = word[:j] + (b,) + word[j:]
                    if result in seen or not self._allowed(result):
                        continue
                    seen.add(result)
                    rows.append((1, j, b, result, _shift_flips(word, result, j, length + 1, pad)))

        if "delete" in self.kinds and length >= 2:
            seen = set()
            for j in range(length):
                result = word[:j] + word[j + 1 :]
                if result in seen or not self._allowed(result):
                    continue
                seen.add(result)
                rows.append((2, j, NO_CHAR, result, _shift_flips(word, result, j, length, pad)))

        entries = [(e, *flip) for e, row in enumerate(rows) for flip in row[4]]
        entry = np.array(entries, dtype=np.int64).reshape(-1, 4)
        return WordEdits(
            kinds=np.array([row[0] for row in rows], dtype=np.int64),
            positions=np.array([row[1] for row in rows], dtype=np.int64),
            chars=np.array([row[2] for row in rows], dtype=np.int64),
            results=tuple(row[3] for row in rows),
            counts=np.array([len(row[4]) for row in rows], dtype=np.int64),
            entry_edit=entry[:, 0],
            entry_pos=entry[:, 1],
            entry_from=entry[:, 2],
            entry_to=entry[:, 3],
        )

    def document(self, x: OneHotText) -> "DocumentEdits":
        return DocumentEdits.build(self, x)


class DocumentEdits:
    """Flat arrays over every legal edit of a document, for vectorized scoring."""

    def __init__(self, x: OneHotText, blocks: list[tuple[int, WordEdits]]):
        self.x = x
        self._blocks = blocks
        sizes = [len(block) for _, block in blocks]
        self._offsets = np.cumsum([0] + sizes)
        empty = np.zeros(0, dtype=np.int64)

        def joined(arrays):
            return np.concatenate(arrays) if arrays else empty

        self.kinds = joined([block.kinds for _, block in blocks])
        self.words = joined([np.full(len(block), i, dtype=np.int64) for i, block in blocks])
        self.positions = joined([block.positions for _, block in blocks])
        self.chars = joined([block.chars for _, block in blocks])
        self.counts = joined([block.counts for _, block in blocks])
        self._entry_edit = joined([block.entry_edit + offset for (_, block), offset in zip(blocks, self._offsets)])
        self._entry_word = joined([np.full(len(block.entry_pos), i, dtype=np.int64) for i, block in blocks])
        self._entry_pos = joined([block.entry_pos for _, block in blocks])
        self._entry_from = joined([block.entry_from for _, block in blocks])
        self._entry_to = joined([block.entry_to for _, block in blocks])

    @classmethod
    def build(cls, catalog: EditCatalog, x: OneHotText) -> "DocumentEdits":
        blocks = []
        for i in range(x.num_words):
            block = catalog.word_edits(x.chars[i, : x.lengths[i]])
            if len(block):
                blocks.append((i, block))
        return cls(x, blocks)

    def __len__(self) -> int:
        return int(self._offsets[-1])

    def raw_scores(self, grad: np.ndarray) -> np.ndarray:
        if grad.shape != self.x.shape:
            raise DimensionError(f"gradient shape {grad.shape} does not match input {self.x.shape}")
        w, p = self._entry_word, self._entry_pos
        deltas = grad[w, p, self._entry_to] - grad[w, p, self._entry_from]
        return np.bincount(self._entry_edit, weights=deltas, minlength=len(self))

    def normalized_scores(self, grad: np.ndarray) -> np.ndarray:
        return self.raw_scores(grad) / np.sqrt(2.0 * self.counts)

    def ranked(self, scores: np.ndarray, limit: int) -> list[int]:
        """Indices of the ``limit`` best scores, ties broken by (kind, word, position, char)."""
        total = len(scores)
        limit = min(limit, total)
        if limit <= 0:
            return []
        kth = np.partition(scores, total - limit)[total - limit]
        candidates = np.flatnonzero(scores >= kth)
        order = np.lexsort(
            (
                self.chars[candidates],
                self.positions[candidates],
                self.words[candidates],
                self.kinds[candidates],
                -scores[candidates],
            )
        )
        return candidates[order[:limit]].tolist()

    def edit(self, index: int) -> EditOp:
        slot = int(np.searchsorted(self._offsets, index, side="right")) - 1
        word, block = self._blocks[slot]
        local = index - int(self._offsets[slot])
        mask = block.entry_edit == local
        flips = tuple(
            zip(
                block.entry_pos[mask].tolist(),
                block.entry_from[mask].tolist(),
                block.entry_to[mask].tolist(),
            )
        )
        return EditOp(
            kind=EDIT_KINDS[int(block.kinds[local])],
            word=word,
            position=int(block.positions[local]),
            char=int(block.chars[local]),
            flips=flips,
            result=block.results[local],
        )

    def edits(self) -> list[EditOp]:
        return [self.edit(k) for k in range(len(self))]


def enumerate_edits(
    x: OneHotText,
    vocab: WordVocab | None,
    config: AttackConfig,
    catalog: EditCatalog | None = None,
) -> list[EditOp]:
    """Every legal edit of ``x``, ordered by (kind, word, position, char)."""
    catalog = catalog or EditCatalog.for_attack(x.alphabet, x.n, vocab, config)
    edits = catalog.document(x).edits()
    return sorted(edits, key=EditOp.sort_key)


def _check_reference(x: OneHotText, edit: EditOp) -> None:
    if not 0 <= edit.word < x.num_words:
        raise ContractError(f"edit references word {edit.word}, document has {x.num_words}")
    for position, before, _ in edit.flips:
        if not 0 <= position < x.n or x.chars[edit.word, position] != before:
            raise ContractError(
                f"edit expects character {before} at ({edit.word}, {position}); input disagrees"
            )


def score_edits(grad: GradientField | np.ndarray, x: OneHotText, edits: Sequence[EditOp]) -> list[ScoredEdit]:
    """First-order loss change of each edit, raw and divided by sqrt(2N)."""
    field = grad.grad if isinstance(grad, GradientField) else np.asarray(grad)
    if field.shape != x.shape:
        raise DimensionError(f"gradient shape {field.shape} does not match input {x.shape}")
    scored = []
    for edit in edits:
        _check_reference(x, edit)
        raw = 0.0
        for position, before, after in edit.flips:
            raw += field[edit.word, position, after] - field[edit.word, position, before]
        scored.append(ScoredEdit(edit, float(raw), float(raw / np.sqrt(2.0 * edit.num_flips))))
    return scored


def edit_direction(x: OneHotText, edit: EditOp) -> np.ndarray:
    """Dense edit vector: +1 at every new character, -1 at every replaced one."""
    _check_reference(x, edit)
    direction = np.zeros(x.shape)
    for position, before, after in edit.flips:
        direction[edit.word, position, before] -= 1.0
        direction[edit.word, position, after] += 1.0
    return direction


def apply_edit(x: OneHotText, edit: EditOp) -> OneHotText:
    """The document after ``edit``; other words are untouched."""
    _check_reference(x, edit)
    if len(edit.result) > x.n - 1:
        raise ContractError(f"edit grows word {edit.word} past {x.n - 1} characters")
    if not edit.result:
        raise ContractError("edit would leave an empty word")
    current = x.chars[edit.word, : x.lengths[edit.word]].tolist()
    for position, before, after in edit.flips:
        while len(current) <= position:
            current.append(x.alphabet.pad_index)
        current[position] = after
    while current and current[-1] == x.alphabet.pad_index:
        current.pop()
    if tuple(current) != edit.result:
        raise ContractError("edit flips do not produce the recorded word")
    return x.with_word(edit.word, edit.result)
