"""Word-level flips for the sentence classifier under meaning-preserving constraints.

A substitution ``w_i -> w_j`` at position i is scored by the gradient with
respect to the one-hot word vector: ``dJ/dx_i[j] - dJ/dx_i[ids_i]``. It is
only used when the two words share part of speech and lexeme rules, are close
in embedding space and neither is a stop word.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from tqdm import tqdm

from hotflip.classifiers import (
    GradientField,
    QueryCounter,
    WordClassifier,
    batch_losses,
    input_gradient_of,
    input_gradients_of,
)
from hotflip.config import WordConstraintConfig, require_valid
from hotflip.corpus import LabeledExample, WordSequence
from hotflip.embeddings import (
    UNKNOWN_TAG,
    EmbeddingTable,
    PosLexicon,
    load_embeddings,
    load_stopwords,
    stem,
)
from hotflip.models import AttackSummary, WordAttackOutcome, WordSubstitution

logger = logging.getLogger(__name__)

CONSTRAINTS = ("same-lexeme", "stop-word", "no-embedding", "cosine", "pos")


@dataclass
class LexicalResources:
    """Everything the constraint checks read; immutable once built."""

    embeddings: EmbeddingTable
    lexicon: PosLexicon
    stopwords: frozenset[str]

    @classmethod
    def from_config(cls, config: WordConstraintConfig, embeddings: EmbeddingTable | str) -> "LexicalResources":
        if not isinstance(embeddings, EmbeddingTable):
            embeddings = load_embeddings(embeddings)
        lexicon = PosLexicon.load(config.lexicon_path) if config.lexicon_path else PosLexicon()
        return cls(embeddings, lexicon, load_stopwords(config.stopwords_path))

    def for_model(self, model: WordClassifier, config: WordConstraintConfig) -> "LexicalResources":
        """Swap in the model's own embedding rows when the config asks for them."""
        if not config.use_model_embeddings:
            return self
        table = EmbeddingTable.from_model(model.vocab.words, model.embedding_table())
        return replace(self, embeddings=table)


@dataclass(frozen=True)
class Rejection:
    substitution: WordSubstitution
    reason: str


@dataclass
class WordFlipScores:
    """Gradient scores of every (position, vocabulary word) substitution."""

    raw: np.ndarray  # (sentence length, |vocab|)
    field: GradientField

    @property
    def normalized(self) -> np.ndarray:
        return self.raw / np.sqrt(2.0)


def check_substitution(
    source: str,
    target: str,
    resources: LexicalResources,
    config: WordConstraintConfig,
) -> str | None:
    """The first constraint the pair violates, or None."""
    if source == target or stem(source) == stem(target):
        return "same-lexeme"
    if source.lower() in resources.stopwords:
        return "stop-word"
    if config.protect_target_stopwords and target.lower() in resources.stopwords:
        return "stop-word"
    similarity = resources.embeddings.similarity(source, target)
    if similarity is None:
        return "no-embedding"
    if not similarity > config.cosine_threshold:
        return "cosine"
    source_tag, target_tag = resources.lexicon.tag(source), resources.lexicon.tag(target)
    if source_tag == UNKNOWN_TAG or target_tag == UNKNOWN_TAG or source_tag != target_tag:
        return "pos"
    return None


def constraint_filter(
    candidates: Sequence[WordSubstitution],
    resources: LexicalResources,
    config: WordConstraintConfig,
) -> tuple[list[WordSubstitution], list[Rejection]]:
    """Split candidates into those passing every constraint and the rejected ones.

    Kept substitutions carry a check record with every constraint marked passed.
    """
    kept, rejected = [], []
    for candidate in candidates:
        reason = check_substitution(candidate.source, candidate.target, resources, config)
        if reason is None:
            kept.append(candidate.model_copy(update={"checks": {name: True for name in CONSTRAINTS}}))
        else:
            checks = {}
            for name in CONSTRAINTS:
                checks[name] = name != reason
                if name == reason:
                    break
            rejected.append(Rejection(candidate.model_copy(update={"checks": checks}), reason))
    return kept, rejected


class TargetIndex:
    """Allowed replacement words per source word, precomputed over the model vocabulary.

    Candidate targets depend only on the lexical resources, so each source
    word is resolved once per run. Every target is re-checked with
    ``check_substitution`` before use.
    """

    def __init__(self, model: WordClassifier, resources: LexicalResources, config: WordConstraintConfig):
        self.resources = resources
        self.config = config
        self.words = model.vocab.words
        size = len(self.words)
        dim = resources.embeddings.dimensions
        self._vectors = np.zeros((size, dim))
        self._has_vector = np.zeros(size, dtype=bool)
        for i, word in enumerate(self.words):
            vector = resources.embeddings.vector(word)
            if vector is not None:
                self._vectors[i] = vector
                self._has_vector[i] = True
        self._has_vector[[model.vocab.pad_index, model.vocab.unk_index]] = False
        norms = np.linalg.norm(self._vectors, axis=1)
        self._has_vector &= norms > 0
        self._unit = np.divide(self._vectors, norms[:, None], out=np.zeros_like(self._vectors), where=norms[:, None] > 0)
        self._tags = np.array([resources.lexicon.tag(w) for w in self.words], dtype=object)
        self._stems = np.array([stem(w) for w in self.words], dtype=object)
        self._stop = np.array([w.lower() in resources.stopwords for w in self.words], dtype=bool)
        self._cache: dict[str, np.ndarray] = {}

    def targets(self, source: str) -> np.ndarray:
        cached = self._cache.get(source)
        if cached is not None:
            return cached
        empty = np.zeros(0, dtype=np.int64)
        vector = self.resources.embeddings.vector(source)
        tag = self.resources.lexicon.tag(source)
        if source.lower() in self.resources.stopwords or vector is None or tag == UNKNOWN_TAG or not np.any(vector):
            self._cache[source] = empty
            return empty
        unit = vector / np.linalg.norm(vector)
        # small slack; exact checks happen per candidate
        mask = self._has_vector & (self._unit @ unit > self.config.cosine_threshold - 1e-9)
        mask &= self._tags == tag
        mask &= self._stems != stem(source)
        if self.config.protect_target_stopwords:
            mask &= ~self._stop
        allowed = np.flatnonzero(mask)
        self._cache[source] = allowed
        return allowed


def score_word_flips(
    model: WordClassifier,
    example: LabeledExample,
    counter: QueryCounter | None = None,
    field: GradientField | None = None,
) -> WordFlipScores:
    """One backward pass scores every substitution at every real position.

    A ``field`` already computed for ``example.x`` is reused without a new pass.
    """
    x: WordSequence = example.x
    if field is None:
        field = input_gradient_of(model, x, example.label, counter)
    grad = field.grad[: x.length]
    current = grad[np.arange(x.length), x.ids[: x.length]]
    return WordFlipScores(raw=grad - current[:, None], field=field)


@dataclass(frozen=True)
class _WordState:
    x: WordSequence
    substitutions: tuple[WordSubstitution, ...] = ()
    score: float = 0.0
    field: GradientField | None = None
    changed: frozenset[int] = frozenset()


def _failure(example, probabilities, counter, state, reason, eligible=True) -> WordAttackOutcome:
    label = int(np.argmax(probabilities))
    return WordAttackOutcome(
        uid=example.uid,
        eligible=eligible,
        success=False,
        true_label=example.label,
        final_label=label,
        final_confidence=float(probabilities[label]),
        substitutions=list(state.substitutions),
        forward_queries=counter.forward,
        backward_queries=counter.backward,
        final_text=" ".join(state.x.tokens),
        reason=reason,
    )


def word_attack(
    model: WordClassifier,
    example: LabeledExample,
    resources: LexicalResources,
    config: WordConstraintConfig,
    max_flips: int | None = None,
    targets: TargetIndex | None = None,
) -> WordAttackOutcome:
    """Beam search over constrained substitutions; success is a label change.

    A position is substituted at most once.
    """
    require_valid(config)
    max_flips = config.max_flips if max_flips is None else max_flips
    resources = resources.for_model(model, config)
    targets = targets or TargetIndex(model, resources, config)
    counter = QueryCounter()
    label = example.label
    x0: WordSequence = example.x

    if max_flips == 0:
        _, probs = batch_losses(model, [x0], label, counter)
        eligible = int(np.argmax(probs[0])) == label
        return _failure(example, probs[0], counter, _WordState(x0), "zero budget", eligible)

    start = _WordState(x0, field=input_gradient_of(model, x0, label, counter))
    if start.field.predicted != label:
        return _failure(example, start.field.probabilities, counter, start, "misclassified before attack", False)

    beam = [start]
    probabilities = [start.field.probabilities]
    width = config.beam_width
    for step in range(1, max_flips + 1):
        candidates = []
        for rank, state in enumerate(beam):
            scores = score_word_flips(model, example.with_input(state.x), field=state.field)
            for i in range(state.x.length):
                if i in state.changed:
                    continue
                allowed = targets.targets(state.x.tokens[i])
                if not len(allowed):
                    continue
                for j, score in zip(allowed.tolist(), scores.raw[i, allowed].tolist()):
                    candidates.append((state.score + score, rank, i, j, score))
        candidates.sort(key=lambda c: (-c[0], c[1], c[2], c[3]))

        successors: list[_WordState] = []
        seen: set[tuple[int, ...]] = set()
        for total, rank, i, j, score in candidates:
            parent = beam[rank]
            source, target = parent.x.tokens[i], targets.words[j]
            if check_substitution(source, target, resources, config) is not None:
                continue
            x = parent.x.with_token(i, target, j)
            key = tuple(x.ids.tolist())
            if key in seen:
                continue
            seen.add(key)
            substitution = WordSubstitution(
                position=i,
                source=source,
                target=target,
                score=score,
                checks={name: True for name in CONSTRAINTS},
            )
            successors.append(
                _WordState(x, parent.substitutions + (substitution,), total, changed=parent.changed | {i})
            )
            if len(successors) == width:
                break

        if not successors:
            reason = "exhaustion" if step == 1 else "budget exhausted"
            return _failure(example, probabilities[0], counter, beam[0], reason)

        inputs = [state.x for state in successors]
        if step < max_flips:
            fields = input_gradients_of(model, inputs, [label] * len(inputs), counter)
            successors = [replace(state, field=f) for state, f in zip(successors, fields)]
            probabilities = [f.probabilities for f in fields]
        else:
            _, step_probs = batch_losses(model, inputs, label, counter)
            probabilities = list(step_probs)
        beam = successors

        for state, probs in zip(beam, probabilities):
            predicted = int(np.argmax(probs))
            if predicted != label:
                return WordAttackOutcome(
                    uid=example.uid,
                    success=True,
                    true_label=label,
                    final_label=predicted,
                    final_confidence=float(probs[predicted]),
                    substitutions=list(state.substitutions),
                    forward_queries=counter.forward,
                    backward_queries=counter.backward,
                    final_text=" ".join(state.x.tokens),
                )

    return _failure(example, probabilities[0], counter, beam[0], "budget exhausted")


def word_attack_dataset(
    model: WordClassifier,
    examples: Sequence[LabeledExample],
    resources: LexicalResources,
    config: WordConstraintConfig,
    jobs: int = 1,
    verbose: bool = True,
) -> tuple[list[WordAttackOutcome], AttackSummary]:
    """Attack every example; outcomes keep the input order."""
    require_valid(config)
    resources = resources.for_model(model, config)
    targets = TargetIndex(model, resources, config)

    def run(example: LabeledExample) -> WordAttackOutcome:
        return word_attack(model, example, resources, config, targets=targets)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(tqdm(pool.map(run, examples), total=len(examples), desc="word attack", disable=not verbose))
    else:
        outcomes = [run(ex) for ex in tqdm(examples, desc="word attack", disable=not verbose)]

    eligible = [o for o in outcomes if o.eligible]
    successes = [o for o in eligible if o.success]
    summary = AttackSummary(
        total=len(outcomes),
        eligible=len(eligible),
        successes=len(successes),
        success_rate=len(successes) / len(eligible) if eligible else None,
        no_eligible=not eligible,
        mean_forward_queries=float(np.mean([o.forward_queries for o in eligible])) if eligible else 0.0,
        mean_backward_queries=float(np.mean([o.backward_queries for o in eligible])) if eligible else 0.0,
    )
    logger.info("word attack: %d/%d eligible sentences flipped", len(successes), len(eligible))
    return outcomes, summary
