import numpy as np
import pytest

from hotflip.config import WordConstraintConfig
from hotflip.corpus import LabeledExample, encode_word_examples
from hotflip.embeddings import EmbeddingTable, PosLexicon, save_embeddings
from hotflip.models import WordSubstitution
from hotflip.wordattack import (
    CONSTRAINTS,
    LexicalResources,
    TargetIndex,
    check_substitution,
    constraint_filter,
    score_word_flips,
    word_attack,
    word_attack_dataset,
)

from conftest import as_predicted

SETTINGS = WordConstraintConfig(beam_width=3, max_flips=2)


def candidate(source, target, position=0):
    return WordSubstitution(position=position, source=source, target=target, score=0.0)


@pytest.mark.parametrize(
    "source, target, reason",
    [
        ("great", "great", "same-lexeme"),
        ("the", "great", "stop-word"),
        ("great", "the", "stop-word"),
        ("great", "cinema", "no-embedding"),
        ("great", "movie", "cosine"),
        ("great", "good", None),
    ],
)
def test_check_substitution(lexical_resources, source, target, reason):
    assert check_substitution(source, target, lexical_resources, SETTINGS) == reason


def test_inflections_count_as_the_same_word(lexical_resources):
    assert check_substitution("pleasing", "pleased", lexical_resources, SETTINGS) == "same-lexeme"


def test_part_of_speech_must_match():
    table = EmbeddingTable(("quick", "quickly", "fast"), np.array([[1.0, 0.0], [1.0, 0.05], [0.99, 0.1]]))
    resources = LexicalResources(table, PosLexicon({"quick": "JJ", "quickly": "RB"}), frozenset())
    assert check_substitution("quick", "quickly", resources, SETTINGS) == "pos"
    # a word missing from the lexicon never matches
    assert check_substitution("quick", "fast", resources, SETTINGS) == "pos"


def test_cosine_threshold_is_strict(lexical_resources):
    similarity = lexical_resources.embeddings.similarity("great", "good")
    at_boundary = WordConstraintConfig(cosine_threshold=similarity)
    below = WordConstraintConfig(cosine_threshold=similarity - 1e-9)
    assert check_substitution("great", "good", lexical_resources, at_boundary) == "cosine"
    assert check_substitution("great", "good", lexical_resources, below) is None


def test_target_stop_words_may_be_allowed():
    table = EmbeddingTable(("this", "that"), np.array([[1.0, 0.0], [0.99, 0.05]]))
    resources = LexicalResources(table, PosLexicon({"this": "DT", "that": "DT"}), frozenset({"that"}))
    relaxed = WordConstraintConfig(protect_target_stopwords=False)
    assert check_substitution("this", "that", resources, SETTINGS) == "stop-word"
    assert check_substitution("this", "that", resources, relaxed) is None


def test_constraint_filter_records_checks(lexical_resources):
    kept, rejected = constraint_filter(
        [candidate("great", "good"), candidate("great", "movie")], lexical_resources, SETTINGS
    )
    assert [c.target for c in kept] == ["good"]
    assert kept[0].checks == {name: True for name in CONSTRAINTS}
    assert rejected[0].reason == "cosine"
    assert rejected[0].substitution.checks == {
        "same-lexeme": True,
        "stop-word": True,
        "no-embedding": True,
        "cosine": False,
    }


def test_constraint_filter_is_idempotent(lexical_resources):
    pool = [candidate(s, t) for s in ("great", "dull", "film") for t in ("good", "bad", "movie", "story")]
    kept, _ = constraint_filter(pool, lexical_resources, SETTINGS)
    again, rejected = constraint_filter(kept, lexical_resources, SETTINGS)
    assert again == kept
    assert rejected == []


def test_target_index_only_offers_valid_targets(word_model, lexical_resources):
    index = TargetIndex(word_model, lexical_resources, SETTINGS)
    offered = [index.words[j] for j in index.targets("great")]
    assert offered
    assert all(check_substitution("great", word, lexical_resources, SETTINGS) is None for word in offered)
    assert len(index.targets("the")) == 0


def test_flip_scores_are_gradient_differences(word_model, word_examples):
    example = word_examples[0]
    scores = score_word_flips(word_model, example)
    grad = scores.field.grad
    i, j = 1, 3
    assert scores.raw[i, j] == pytest.approx(grad[i, j] - grad[i, example.x.ids[i]])
    assert np.allclose(scores.raw[np.arange(example.x.length), example.x.ids[: example.x.length]], 0.0)


def test_every_substitution_passes_the_constraints(word_model, word_examples, lexical_resources):
    for example in word_examples:
        outcome = word_attack(word_model, example, lexical_resources, SETTINGS)
        positions = [s.position for s in outcome.substitutions]
        assert len(positions) == len(set(positions)) <= SETTINGS.max_flips
        for sub in outcome.substitutions:
            assert example.x.tokens[sub.position] == sub.source
            assert check_substitution(sub.source, sub.target, lexical_resources, SETTINGS) is None
            assert all(sub.checks.values())
        if outcome.success:
            assert outcome.final_label != example.label


def test_stop_word_sentence_is_exhausted(word_model, lexical_resources):
    raw = [LabeledExample(text="the a and was with", label=0, uid=0)]
    encoded = encode_word_examples(raw, word_model.vocab, word_model.config.min_length)
    (example,) = as_predicted(word_model, encoded)
    outcome = word_attack(word_model, example, lexical_resources, SETTINGS)
    assert not outcome.success
    assert outcome.substitutions == []
    assert outcome.reason == "exhaustion"


def test_zero_flip_budget(word_model, word_examples, lexical_resources):
    outcome = word_attack(word_model, word_examples[0], lexical_resources, SETTINGS, max_flips=0)
    assert outcome.reason == "zero budget"
    assert outcome.substitutions == []
    assert (outcome.forward_queries, outcome.backward_queries) == (1, 0)


def test_model_embeddings_drive_the_cosine_check(word_model, word_examples, lexical_resources):
    settings = WordConstraintConfig(use_model_embeddings=True, cosine_threshold=-1.0, max_flips=1)
    resources = lexical_resources.for_model(word_model, settings)
    assert resources.embeddings.words == word_model.vocab.words
    outcome = word_attack(word_model, word_examples[0], lexical_resources, settings)
    for sub in outcome.substitutions:
        assert check_substitution(sub.source, sub.target, resources, settings) is None


def test_dataset_attack(word_model, word_examples, lexical_resources):
    outcomes, summary = word_attack_dataset(word_model, word_examples, lexical_resources, SETTINGS, verbose=False)
    assert [o.uid for o in outcomes] == [ex.uid for ex in word_examples]
    assert summary.eligible == len(word_examples)
    assert summary.successes == sum(o.success for o in outcomes)


def test_resources_from_files(tmp_path, lexical_resources):
    vectors = save_embeddings(lexical_resources.embeddings, tmp_path / "vectors.txt")
    lexicon = tmp_path / "lexicon.tsv"
    lexicon.write_text("great\tJJ\ngood\tJJ\n", encoding="utf-8")
    settings = WordConstraintConfig(lexicon_path=lexicon)
    resources = LexicalResources.from_config(settings, str(vectors))
    assert check_substitution("great", "good", resources, settings) is None
    assert "the" in resources.stopwords


def test_reused_field_costs_no_queries(word_model, word_examples):
    from hotflip.classifiers import QueryCounter

    example = word_examples[1]
    counter = QueryCounter()
    fresh = score_word_flips(word_model, example, counter)
    again = score_word_flips(word_model, example, counter, field=fresh.field)
    assert (counter.forward, counter.backward) == (1, 1)
    np.testing.assert_array_equal(again.raw, fresh.raw)


def test_attack_scores_come_from_flip_scores(word_model, word_examples, lexical_resources):
    settings = WordConstraintConfig(beam_width=1, max_flips=1, cosine_threshold=-1.0)
    for example in word_examples:
        outcome = word_attack(word_model, example, lexical_resources, settings)
        if not outcome.substitutions:
            continue
        (sub,) = outcome.substitutions
        scores = score_word_flips(word_model, example)
        assert sub.score == pytest.approx(scores.raw[sub.position, word_model.vocab.index(sub.target)])


def test_substitution_score_is_a_directional_derivative(word_model, word_examples):
    from conftest import dense_loss

    example = word_examples[0]
    scores = score_word_flips(word_model, example)
    i = 1
    j = next(k for k in range(2, len(word_model.vocab)) if k != example.x.ids[i])
    base = example.x.onehot(len(word_model.vocab))
    direction = np.zeros_like(base)
    direction[i, example.x.ids[i]] = -1.0
    direction[i, j] = 1.0

    start = dense_loss(word_model, example.x, example.label, base)
    errors = []
    for eps in (1e-2, 1e-3, 1e-4):
        moved = dense_loss(word_model, example.x, example.label, base + eps * direction)
        errors.append(abs((moved - start) / eps - scores.raw[i, j]))
    for larger, smaller in zip(errors, errors[1:]):
        assert smaller < larger or larger < 1e-10
