"""Experiment-scale checks on the real AG-news and SST data.

Set HOTFLIP_DATA_DIR to a directory holding agnews/train.csv, agnews/test.csv,
sst/train.tsv, sst/dev.tsv, sst/test.tsv, embeddings.txt and pos_lexicon.tsv.
Run with ``pytest -m slow``.
"""

import logging
import os
from pathlib import Path

import pytest

from hotflip.analysis import edit_statistics
from hotflip.attack import attack_dataset
from hotflip.classifiers import CharClassifier, WordClassifier
from hotflip.config import (
    AdvTrainConfig,
    AttackConfig,
    CharModelConfig,
    EncodingConfig,
    TrainConfig,
    WordConstraintConfig,
    WordModelConfig,
)
from hotflip.corpus import (
    build_alphabet,
    build_word_index,
    build_word_vocab,
    encode_examples,
    encode_word_examples,
    load_agnews,
    load_sst_binary,
)
from hotflip.robustness import adversarial_train, robustness_report
from hotflip.training import train
from hotflip.wordattack import LexicalResources, check_substitution, word_attack_dataset

logger = logging.getLogger(__name__)

DATA_FILES = (
    "agnews/train.csv",
    "agnews/test.csv",
    "sst/train.tsv",
    "sst/dev.tsv",
    "sst/test.tsv",
    "embeddings.txt",
    "pos_lexicon.tsv",
)


def _data_dir() -> Path | None:
    root = os.getenv("HOTFLIP_DATA_DIR")
    if not root or not all((Path(root) / name).is_file() for name in DATA_FILES):
        return None
    return Path(root)


DATA_DIR = _data_dir()

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(DATA_DIR is None, reason="HOTFLIP_DATA_DIR does not hold the experiment datasets"),
]

ENCODING = EncodingConfig(max_words=40, max_chars=16)
CHAR_TRAIN = TrainConfig(batch_size=64, learning_rate=0.1, max_epochs=3, patience=2, seed=13)
FLIP_ATTACK = AttackConfig(beam_width=10, budget=0.10, tau=0.5, edit_kinds=("flip",), vocab_constraint=False)


@pytest.fixture(scope="module")
def agnews():
    train_raw = load_agnews(DATA_DIR / "agnews/train.csv")[:11000]
    test_raw = load_agnews(DATA_DIR / "agnews/test.csv")[:300]
    alphabet = build_alphabet(train_raw)
    # test characters outside the training alphabet cannot be encoded
    test_raw = [ex for ex in test_raw if all(ch in alphabet for ch in "".join(ex.text.split()))]
    train_set = encode_examples(train_raw[:10000], alphabet, ENCODING.max_chars, ENCODING.max_words)
    dev_set = encode_examples(train_raw[10000:], alphabet, ENCODING.max_chars, ENCODING.max_words)
    test_set = encode_examples(test_raw, alphabet, ENCODING.max_chars, ENCODING.max_words)
    return alphabet, train_set, dev_set, test_set, build_word_vocab(train_raw)


@pytest.fixture(scope="module")
def char_baseline(agnews):
    alphabet, train_set, dev_set, _, _ = agnews
    model = CharClassifier.initialize(CharModelConfig(), alphabet, ENCODING, seed=13)
    return train(model, train_set, dev_set, CHAR_TRAIN, verbose=False).model


def test_beam_is_the_strongest_attack(agnews, char_baseline):
    test_set = agnews[3]
    rates = {}
    for method in ("beam", "greedy", "keystar"):
        _, summary = attack_dataset(char_baseline, test_set, None, FLIP_ATTACK, method, jobs=4, verbose=False)
        rates[method] = summary.success_rate
    logger.info("success rates: %s", rates)
    assert rates["beam"] >= rates["greedy"]
    assert rates["beam"] - rates["keystar"] >= 0.20


def test_white_box_training_is_the_most_robust(agnews, char_baseline):
    alphabet, train_set, dev_set, test_set, _ = agnews
    trained = {"baseline": char_baseline}
    for name, method in (("hotflip", "hotflip-white"), ("keystar", "keystar-black")):
        model = CharClassifier.initialize(CharModelConfig(), alphabet, ENCODING, seed=13)
        adv = AdvTrainConfig(method=method, flip_fraction=0.20)
        trained[name] = adversarial_train(model, train_set, dev_set, CHAR_TRAIN, adv, verbose=False).model
    rows = robustness_report(list(trained.items()), test_set, FLIP_ATTACK, None, jobs=4, verbose=False)
    rates = {row.model: row.attack_success_rate for row in rows}
    logger.info("robustness: %s", [row.model_dump() for row in rows])
    assert rates["hotflip"] < rates["baseline"]
    assert rates["hotflip"] < rates["keystar"]


def test_flip_is_the_modal_edit(agnews, char_baseline):
    _, _, _, test_set, vocab = agnews
    config = AttackConfig(beam_width=10, budget=0.10, tau=0.5)
    outcomes, _ = attack_dataset(char_baseline, test_set, vocab, config, jobs=4, verbose=False)
    stats = edit_statistics(outcomes)
    logger.info("edit kinds: %s (reference mean change 4.18%%)", stats.model_dump())
    assert not stats.empty
    assert stats.modal_kind() == "flip"


def test_word_substitutions_pass_every_constraint():
    train_raw = load_sst_binary(DATA_DIR / "sst/train.tsv")
    dev_raw = load_sst_binary(DATA_DIR / "sst/dev.tsv")
    test_raw = load_sst_binary(DATA_DIR / "sst/test.tsv")
    config = WordModelConfig()
    index = build_word_index(train_raw, config.max_vocab)
    model = WordClassifier.initialize(config, index, seed=13)

    def encode(raw):
        return encode_word_examples(raw, index, config.min_length)

    model = train(model, encode(train_raw), encode(dev_raw), TrainConfig(max_epochs=3, seed=13), verbose=False).model

    constraints = WordConstraintConfig(lexicon_path=DATA_DIR / "pos_lexicon.tsv", max_flips=2)
    resources = LexicalResources.from_config(constraints, str(DATA_DIR / "embeddings.txt"))
    outcomes, _ = word_attack_dataset(model, encode(test_raw), resources, constraints, jobs=4, verbose=False)
    for outcome in outcomes:
        for substitution in outcome.substitutions:
            assert check_substitution(substitution.source, substitution.target, resources, constraints) is None
    flipped = sum(1 for o in outcomes if o.eligible and o.success and len(o.substitutions) <= 2)
    logger.info("%d of %d sentences flipped with at most two words (reference: 41, 2%%)", flipped, len(outcomes))
