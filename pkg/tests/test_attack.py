import math

import numpy as np
import pytest

from hotflip.attack import (
    attack_dataset,
    beam_attack,
    best_edit,
    budget_steps,
    greedy_attack,
    is_success,
    keystar_attack,
    summarize,
)
from hotflip.classifiers import batch_losses, input_gradient, predict_proba
from hotflip.config import AttackConfig
from hotflip.corpus import LabeledExample, build_word_vocab, encode
from hotflip.edits import apply_edit, edit_direction, enumerate_edits, score_edits
from hotflip.errors import ConfigError, ExhaustionError

from conftest import as_predicted, smooth_char_model


def config(**overrides):
    base = dict(beam_width=3, budget=0.2, tau=0.999, vocab_constraint=False)
    base.update(overrides)
    return AttackConfig(**base)


@pytest.mark.parametrize(
    "budget, characters, expected",
    [(0.1, 30, 3), (0.1, 31, 4), (0.0, 50, 0), (0.25, 4, 1), (1.0, 7, 7)],
)
def test_budget_steps(budget, characters, expected):
    assert budget_steps(characters, AttackConfig(budget=budget)) == expected


def test_budget_steps_respects_max_steps():
    assert budget_steps(100, AttackConfig(budget=0.5, max_steps=2)) == 2


def test_best_edit_matches_dense_argmax(char_model, eligible_examples):
    example = eligible_examples[2]
    field = input_gradient(char_model, example)
    chosen = best_edit(field, example.x, None, config())
    scores = [
        (-float(np.sum(field.grad * edit_direction(example.x, e))) / math.sqrt(2 * e.num_flips), e.sort_key())
        for e in enumerate_edits(example.x, None, config())
    ]
    assert chosen.edit.sort_key() == min(scores)[1]
    assert chosen.normalized == pytest.approx(-min(scores)[0])


def test_best_edit_without_legal_edits(alphabet):
    x = encode("a", alphabet, n=7, m=1)
    with pytest.raises(ExhaustionError):
        best_edit(np.zeros(x.shape), x, None, config(edit_kinds=("delete",)))


def test_query_accounting(char_model, eligible_examples):
    settings = config(beam_width=4)
    for example in eligible_examples:
        outcome = beam_attack(char_model, example, None, settings)
        steps = budget_steps(example.x.character_count(), settings)
        assert 1 <= outcome.backward_queries <= 1 + settings.beam_width * (steps - 1)
        assert outcome.forward_queries <= 1 + settings.beam_width * steps
        assert outcome.forward_queries >= outcome.backward_queries
        assert len(outcome.edits) <= steps


def test_greedy_equals_beam_of_width_one(char_model, eligible_examples):
    for example in eligible_examples[:3]:
        greedy = greedy_attack(char_model, example, None, config())
        beam = beam_attack(char_model, example, None, config(beam_width=1))
        assert greedy.method == "greedy"
        assert greedy.model_dump(exclude={"method"}) == beam.model_dump(exclude={"method"})


def test_success_means_confident_misclassification(char_model, eligible_examples):
    settings = config(budget=1.0, tau=0.5, beam_width=2, max_steps=6)
    for example in eligible_examples:
        outcome = beam_attack(char_model, example, None, settings)
        if outcome.success:
            probs = predict_proba(char_model, [encode(outcome.final_text, char_model.alphabet, 7, 5)])[0]
            assert is_success(probs, example.label, settings.tau)
            assert outcome.final_label != example.label
            assert outcome.final_confidence >= settings.tau
        else:
            assert outcome.reason in ("budget exhausted", "no legal edits")


def test_char_change_fraction(char_model, eligible_examples):
    example = eligible_examples[1]
    outcome = beam_attack(char_model, example, None, config(budget=0.3))
    assert outcome.characters == example.x.character_count()
    assert outcome.char_change_fraction == pytest.approx(len(outcome.edits) / outcome.characters)


def test_zero_budget_leaves_the_input_alone(char_model, eligible_examples):
    example = eligible_examples[0]
    outcome = beam_attack(char_model, example, None, config(budget=0.0))
    assert outcome.edits == []
    assert not outcome.success
    assert outcome.reason == "zero budget"
    assert (outcome.forward_queries, outcome.backward_queries) == (1, 0)
    assert outcome.final_text == example.x.decode()


def test_vocab_constraint_holds_on_every_state(char_model, eligible_examples, raw_char_examples):
    vocab = build_word_vocab(raw_char_examples)
    settings = config(vocab_constraint=True, budget=0.3)
    for example in eligible_examples[:3]:
        outcome = beam_attack(char_model, example, vocab, settings)
        changed = {edit.word for edit in outcome.edits}
        final_words = outcome.final_text.split()
        for i in changed:
            assert final_words[i] not in vocab


def test_keystar_is_deterministic_and_gradient_free(char_model, eligible_examples):
    settings = config(keystar_queries=5, budget=0.3, seed=21)
    example = eligible_examples[3]
    first = keystar_attack(char_model, example, settings)
    second = keystar_attack(char_model, example, settings)
    assert first == second
    assert first.backward_queries == 0
    assert first.forward_queries == 1 + 5 * len(first.edits)
    assert all(edit.kind == "flip" for edit in first.edits)


def test_keystar_traces_one_loss_per_step(char_model, eligible_examples):
    outcome = keystar_attack(char_model, eligible_examples[1], config(keystar_queries=8, budget=0.5))
    assert len(outcome.loss_trace) == len(outcome.edits) + 1


def test_attack_dataset_marks_misclassified_examples(char_model, eligible_examples):
    flipped = eligible_examples[0]
    wrong = LabeledExample(text=flipped.text, label=1 - flipped.label, x=flipped.x, uid=99)
    outcomes, summary = attack_dataset(
        char_model, [wrong] + eligible_examples[1:3], None, config(), verbose=False
    )
    assert outcomes[0].uid == 99
    assert not outcomes[0].eligible
    assert outcomes[0].reason == "misclassified before attack"
    assert summary.total == 3 and summary.eligible == 2


def test_attack_dataset_is_order_stable_across_workers(char_model, eligible_examples):
    settings = config()
    serial, _ = attack_dataset(char_model, eligible_examples, None, settings, jobs=1, verbose=False)
    parallel, _ = attack_dataset(char_model, eligible_examples, None, settings, jobs=3, verbose=False)
    assert serial == parallel


def test_summary_without_eligible_examples():
    summary = summarize([])
    assert summary.no_eligible
    assert summary.success_rate is None


def test_invalid_config_is_rejected(char_model, eligible_examples):
    with pytest.raises(ConfigError):
        beam_attack(char_model, eligible_examples[0], None, config(edit_kinds=("flip", "swap")))
    with pytest.raises(ConfigError):
        beam_attack(char_model, eligible_examples[0], None, config(tau=1.0))


def test_wide_one_step_beam_is_the_best_edit(char_model, eligible_examples):
    for example in eligible_examples:
        candidates = enumerate_edits(example.x, None, config())
        settings = config(beam_width=len(candidates), max_steps=1, tau=1 - 1e-12)
        outcome = beam_attack(char_model, example, None, settings)
        expected = best_edit(input_gradient(char_model, example), example.x, None, config())
        assert not outcome.success
        assert outcome.edits == [expected.edit.summary(char_model.alphabet, outcome.edits[0].score)]
        assert outcome.cumulative_score == pytest.approx(expected.normalized)
        assert outcome.final_text == apply_edit(example.x, expected.edit).decode()
        assert outcome.backward_queries <= settings.beam_width * 1


def test_one_step_success_only_grows_with_beam_width(char_model, eligible_examples):
    succeeded = {}
    for width in (1, 2, 4, 8):
        settings = config(beam_width=width, budget=1.0, max_steps=1, tau=0.5)
        succeeded[width] = {
            example.uid for example in eligible_examples if beam_attack(char_model, example, None, settings).success
        }
    greedy = {
        example.uid
        for example in eligible_examples
        if greedy_attack(char_model, example, None, config(budget=1.0, max_steps=1, tau=0.5)).success
    }
    assert greedy == succeeded[1]
    assert succeeded[1] <= succeeded[2] <= succeeded[4] <= succeeded[8]
    assert len(greedy) <= len(succeeded[8])


def test_surrogate_top_five_holds_the_best_flip(alphabet, encoding, char_examples):
    flips = config(edit_kinds=("flip",))
    hits = trials = 0
    for seed in range(4):
        model = smooth_char_model(alphabet, encoding, seed)
        for example in as_predicted(model, char_examples):
            edits = enumerate_edits(example.x, None, flips)
            scored = score_edits(input_gradient(model, example), example.x, edits)
            top_five = sorted(range(len(edits)), key=lambda k: (-scored[k].normalized, edits[k].sort_key()))[:5]
            losses, _ = batch_losses(model, [apply_edit(example.x, e) for e in edits], example.label)
            trials += 1
            hits += int(np.argmax(losses)) in top_five
    assert hits >= 0.8 * trials
