"""Gradient-guided adversaries for the character model, plus a black-box baseline.

``beam_attack`` scores every legal edit of each beam state with one backward
pass, extends the beam with the best cumulative scores and stops as soon as a
state is misclassified with confidence at least ``tau`` or the character budget
is spent. ``keystar_attack`` only queries losses of random character flips.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from tqdm import tqdm

from hotflip.classifiers import (
    CharClassifier,
    GradientField,
    QueryCounter,
    batch_losses,
    input_gradient_of,
    input_gradients_of,
    predict_proba,
)
from hotflip.config import EDIT_KINDS, AttackConfig, require_valid, substream
from hotflip.corpus import LabeledExample, OneHotText, WordVocab, document_characters
from hotflip.edits import EditCatalog, EditOp, ScoredEdit, apply_edit, score_edits
from hotflip.errors import ConfigError, ExhaustionError
from hotflip.models import AttackOutcome, AttackSummary

logger = logging.getLogger(__name__)

METHODS = ("beam", "greedy", "keystar")


@dataclass(frozen=True)
class BeamState:
    """A partial attack: the edits so far and the document they produce."""

    x: OneHotText
    edits: tuple[ScoredEdit, ...] = ()
    score: float = 0.0  # sum of each step's normalized score
    field: GradientField | None = None

    @property
    def text(self) -> str:
        return self.x.decode()


def budget_steps(characters: int, config: AttackConfig) -> int:
    """Edits allowed for a document of ``characters`` characters."""
    # round away float noise such as 0.1 * 30 = 3.0000000000000004
    steps = math.ceil(round(config.budget * characters, 9))
    if config.max_steps is not None:
        steps = min(steps, config.max_steps)
    return steps


def wrong_confidence(probabilities: np.ndarray, label: int) -> float | None:
    """Confidence of the predicted class when it is wrong, else None."""
    predicted = int(np.argmax(probabilities))
    return None if predicted == label else float(probabilities[predicted])


def is_success(probabilities: np.ndarray, label: int, tau: float) -> bool:
    confidence = wrong_confidence(probabilities, label)
    return confidence is not None and confidence >= tau


def best_edit(
    grad: GradientField | np.ndarray,
    x: OneHotText,
    vocab: WordVocab | None,
    config: AttackConfig,
    catalog: EditCatalog | None = None,
) -> ScoredEdit:
    """Highest normalized score; ties go to the smallest (kind, word, position, char)."""
    catalog = catalog or EditCatalog.for_attack(x.alphabet, x.n, vocab, config)
    doc = catalog.document(x)
    if not len(doc):
        raise ExhaustionError("no legal edits")
    field = grad.grad if isinstance(grad, GradientField) else grad
    index = doc.ranked(doc.normalized_scores(field), 1)[0]
    return score_edits(field, x, [doc.edit(index)])[0]


def _outcome(
    example: LabeledExample,
    state: BeamState,
    probabilities: np.ndarray,
    success: bool,
    counter: QueryCounter,
    method: str,
    characters: int,
    loss_trace: list[float],
    wrong_trace: list[float | None],
    reason: str | None = None,
) -> AttackOutcome:
    """Package a finished search.

    The change fraction counts edit operations, the unit the character budget
    is spent in. A delete or insert that shifts the rest of a word still
    counts once.
    """
    alphabet = example.x.alphabet
    final_label = int(np.argmax(probabilities))
    return AttackOutcome(
        uid=example.uid,
        method=method,
        success=success,
        true_label=example.label,
        final_label=final_label,
        final_confidence=float(probabilities[final_label]),
        edits=[s.edit.summary(alphabet, s.normalized) for s in state.edits],
        forward_queries=counter.forward,
        backward_queries=counter.backward,
        characters=characters,
        char_change_fraction=len(state.edits) / characters if characters else 0.0,
        cumulative_score=state.score,
        final_text=state.text,
        loss_trace=loss_trace,
        wrong_confidence_trace=wrong_trace,
        reason=reason,
    )


def beam_attack(
    model: CharClassifier,
    example: LabeledExample,
    vocab: WordVocab | None,
    config: AttackConfig,
    catalog: EditCatalog | None = None,
    method: str = "beam",
) -> AttackOutcome:
    """Beam search over edit sequences ranked by cumulative first-order score."""
    require_valid(config)
    x0, label = example.x, example.label
    catalog = catalog or EditCatalog.for_attack(x0.alphabet, x0.n, vocab, config)
    counter = QueryCounter()
    characters = document_characters(x0)
    steps = budget_steps(characters, config)
    width = config.beam_width

    if steps == 0:
        _, probs = batch_losses(model, [x0], label, counter)
        start = BeamState(x0)
        return _outcome(
            example, start, probs[0], is_success(probs[0], label, config.tau), counter, method,
            characters, [], [wrong_confidence(probs[0], label)],
            reason=None if is_success(probs[0], label, config.tau) else "zero budget",
        )

    field = input_gradient_of(model, x0, label, counter)
    beam = [BeamState(x0, field=field)]
    loss_trace = [field.loss]
    wrong_trace = [wrong_confidence(field.probabilities, label)]
    if is_success(field.probabilities, label, config.tau):
        return _outcome(example, beam[0], field.probabilities, True, counter, method, characters, loss_trace, wrong_trace)

    probabilities = [field.probabilities]
    reason = "budget exhausted"
    for step in range(1, steps + 1):
        candidates = []
        for rank, state in enumerate(beam):
            doc = catalog.document(state.x)
            if not len(doc):
                continue
            scores = doc.normalized_scores(state.field.grad)
            for index in doc.ranked(scores, width):
                candidates.append((state.score + float(scores[index]), rank, doc.edit(index)))
        if not candidates:
            reason = "no legal edits"
            break

        candidates.sort(key=lambda c: (-c[0], c[1], *c[2].sort_key()))
        successors: list[BeamState] = []
        seen: set[bytes] = set()
        for _, rank, edit in candidates:
            parent = beam[rank]
            scored = score_edits(parent.field.grad, parent.x, [edit])[0]
            x = apply_edit(parent.x, edit)
            key = x.key()
            if key in seen:
                continue
            seen.add(key)
            successors.append(BeamState(x, parent.edits + (scored,), parent.score + scored.normalized))
            if len(successors) == width:
                break

        inputs = [state.x for state in successors]
        if step < steps:
            fields = input_gradients_of(model, inputs, [label] * len(inputs), counter)
            successors = [replace(state, field=f) for state, f in zip(successors, fields)]
            losses = [f.loss for f in fields]
            probabilities = [f.probabilities for f in fields]
        else:
            step_losses, step_probs = batch_losses(model, inputs, label, counter)
            losses, probabilities = step_losses.tolist(), list(step_probs)

        beam = successors
        loss_trace.append(float(losses[0]))
        confidences = [c for c in (wrong_confidence(p, label) for p in probabilities) if c is not None]
        wrong_trace.append(max(confidences) if confidences else None)

        if config.check_every_step or step == steps:
            for state, probs in zip(beam, probabilities):
                if is_success(probs, label, config.tau):
                    logger.debug("example %d flipped after %d edits", example.uid, step)
                    return _outcome(example, state, probs, True, counter, method, characters, loss_trace, wrong_trace)

    return _outcome(
        example, beam[0], probabilities[0], False, counter, method, characters, loss_trace, wrong_trace, reason
    )


def greedy_attack(
    model: CharClassifier,
    example: LabeledExample,
    vocab: WordVocab | None,
    config: AttackConfig,
    catalog: EditCatalog | None = None,
) -> AttackOutcome:
    """Beam search with a single state."""
    return beam_attack(model, example, vocab, replace(config, beam_width=1), catalog, method="greedy")


def _random_flip(x: OneHotText, rng: np.random.Generator) -> EditOp:
    words = np.flatnonzero(x.lengths[: x.num_words] > 0)
    i = int(words[rng.integers(len(words))])
    j = int(rng.integers(x.lengths[i]))
    current = int(x.chars[i, j])
    # any non-padding character other than the current one
    b = int(rng.integers(1, x.alphabet.size - 1))
    if b >= current:
        b += 1
    word = tuple(int(c) for c in x.chars[i, : x.lengths[i]])
    return EditOp("flip", i, j, b, ((j, current, b),), word[:j] + (b,) + word[j + 1 :])


def keystar_search(
    model: CharClassifier,
    example: LabeledExample,
    config: AttackConfig,
    rng: np.random.Generator | None = None,
) -> tuple[AttackOutcome, OneHotText]:
    """Greedy black-box search over random character flips (forward passes only).

    Returns the outcome and the final document, which adversarial training reuses.
    """
    require_valid(config)
    rng = rng or substream(config.seed, "keystar", example.uid)
    x0, label = example.x, example.label
    counter = QueryCounter()
    characters = document_characters(x0)
    steps = budget_steps(characters, config)

    losses, probs = batch_losses(model, [x0], label, counter)
    state = BeamState(x0)
    current = probs[0]
    loss_trace = [float(losses[0])]
    wrong_trace = [wrong_confidence(current, label)]

    def finish(success: bool, reason: str | None = None) -> tuple[AttackOutcome, OneHotText]:
        outcome = _outcome(
            example, state, current, success, counter, "keystar", characters, loss_trace, wrong_trace, reason
        )
        return outcome, state.x

    if is_success(current, label, config.tau):
        return finish(True)
    if x0.alphabet.size < 3 or characters == 0:
        return finish(False, "no legal edits")

    for step in range(1, steps + 1):
        flips = [_random_flip(state.x, rng) for _ in range(config.keystar_queries)]
        inputs = [apply_edit(state.x, flip) for flip in flips]
        losses, probs = batch_losses(model, inputs, label, counter)
        best = int(np.argmax(losses))
        gain = float(losses[best] - loss_trace[-1])
        state = BeamState(inputs[best], state.edits + (ScoredEdit(flips[best], gain, gain),), state.score + gain)
        current = probs[best]
        loss_trace.append(float(losses[best]))
        wrong_trace.append(wrong_confidence(current, label))
        if (config.check_every_step or step == steps) and is_success(current, label, config.tau):
            return finish(True)

    return finish(False, "budget exhausted")


def keystar_attack(
    model: CharClassifier,
    example: LabeledExample,
    config: AttackConfig,
    rng: np.random.Generator | None = None,
) -> AttackOutcome:
    return keystar_search(model, example, config, rng)[0]


def attack_one(
    model: CharClassifier,
    example: LabeledExample,
    vocab: WordVocab | None,
    config: AttackConfig,
    method: str = "beam",
    catalog: EditCatalog | None = None,
) -> AttackOutcome:
    if method == "beam":
        return beam_attack(model, example, vocab, config, catalog)
    if method == "greedy":
        return greedy_attack(model, example, vocab, config, catalog)
    if method == "keystar":
        return keystar_attack(model, example, config)
    raise ConfigError([f"unknown attack method {method!r}; expected one of {', '.join(METHODS)}"])


def summarize(outcomes: Sequence[AttackOutcome]) -> AttackSummary:
    """Success rate over eligible examples and statistics over successes."""
    eligible = [o for o in outcomes if o.eligible]
    successes = [o for o in eligible if o.success]
    kinds = {kind: 0 for kind in EDIT_KINDS}
    for outcome in successes:
        for kind, count in outcome.kind_counts().items():
            kinds[kind] += count
    total_edits = sum(kinds.values())
    return AttackSummary(
        total=len(outcomes),
        eligible=len(eligible),
        successes=len(successes),
        success_rate=len(successes) / len(eligible) if eligible else None,
        no_eligible=not eligible,
        mean_char_change=float(np.mean([o.char_change_fraction for o in successes])) if successes else None,
        edit_kind_distribution={k: v / total_edits for k, v in kinds.items()} if total_edits else {},
        mean_forward_queries=float(np.mean([o.forward_queries for o in eligible])) if eligible else 0.0,
        mean_backward_queries=float(np.mean([o.backward_queries for o in eligible])) if eligible else 0.0,
    )


def attack_dataset(
    model: CharClassifier,
    examples: Sequence[LabeledExample],
    vocab: WordVocab | None,
    config: AttackConfig,
    method: str = "beam",
    jobs: int = 1,
    verbose: bool = True,
) -> tuple[list[AttackOutcome], AttackSummary]:
    """Attack every correctly classified example; misclassified ones are marked ineligible.

    Outcomes come back in the order of ``examples`` whatever ``jobs`` is.
    """
    require_valid(config)
    if method not in METHODS:
        raise ConfigError([f"unknown attack method {method!r}; expected one of {', '.join(METHODS)}"])
    if not examples:
        return [], summarize([])

    probs = predict_proba(model, [ex.x for ex in examples])
    first = examples[0].x
    catalog = EditCatalog.for_attack(first.alphabet, first.n, vocab, config)

    def run(index: int) -> AttackOutcome:
        example = examples[index]
        predicted = int(np.argmax(probs[index]))
        if predicted != example.label:
            return AttackOutcome(
                uid=example.uid,
                method=method,
                eligible=False,
                success=False,
                true_label=example.label,
                final_label=predicted,
                final_confidence=float(probs[index][predicted]),
                characters=document_characters(example.x),
                final_text=example.x.decode(),
                reason="misclassified before attack",
            )
        return attack_one(model, example, vocab, config, method, catalog)

    indices = range(len(examples))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(tqdm(pool.map(run, indices), total=len(examples), desc=f"{method} attack", disable=not verbose))
    else:
        outcomes = [run(i) for i in tqdm(indices, desc=f"{method} attack", disable=not verbose)]

    summary = summarize(outcomes)
    logger.info(
        "%s attack: %d/%d eligible examples flipped",
        method,
        summary.successes,
        summary.eligible,
    )
    return outcomes, summary
