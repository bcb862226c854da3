"""Shared fixtures: tiny char and word models over a handful of sentences."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from hotflip import diffcore as dc
from hotflip.classifiers import CharClassifier, WordClassifier, predict_proba
from hotflip.config import CharModelConfig, EncodingConfig, WordModelConfig
from hotflip.corpus import (
    LabeledExample,
    build_alphabet,
    build_word_index,
    encode_examples,
    encode_word_examples,
)
from hotflip.diffcore import Tape
from hotflip.embeddings import EmbeddingTable, PosLexicon
from hotflip.wordattack import LexicalResources

CHAR_TEXTS = [
    ("the cat sat down", 0),
    ("a dog ran far away", 1),
    ("cats nap all day", 0),
    ("dogs bark loud", 1),
    ("the bird sang", 0),
    ("fast cars race", 1),
]

WORD_TEXTS = [
    ("a great and pleasant film", 1),
    ("a terrible and dull film", 0),
    ("the movie was good", 1),
    ("the movie was awful", 0),
    ("pleasant story with great acting", 1),
    ("dull story with bad acting", 0),
]


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: experiment-scale check that needs HOTFLIP_DATA_DIR")


def dense_loss(model, x, label, dense):
    """Loss of a continuous relaxation of the one-hot input."""
    tape = Tape()
    weights = model.bind(tape)
    batch = model.batch_inputs([x], [label])
    logits = model.logits(tape, weights, batch, onehot=tape.leaf(dense[None]))
    return float(dc.softmax_cross_entropy(logits, batch.labels).value)


def as_predicted(model, examples):
    """Relabel examples with the model's own predictions so every one is eligible."""
    probs = predict_proba(model, [ex.x for ex in examples])
    return [
        LabeledExample(text=ex.text, label=int(np.argmax(p)), x=ex.x, uid=ex.uid)
        for ex, p in zip(examples, probs)
    ]


@pytest.fixture
def raw_char_examples():
    return [LabeledExample(text=text, label=label, uid=i) for i, (text, label) in enumerate(CHAR_TEXTS)]


@pytest.fixture
def alphabet(raw_char_examples):
    return build_alphabet(raw_char_examples)


@pytest.fixture
def encoding():
    return EncodingConfig(max_words=5, max_chars=7)


@pytest.fixture
def char_config():
    return CharModelConfig(char_dim=4, kernel_width=3, kernel_count=6, hidden_size=5, num_classes=2)


@pytest.fixture
def char_model(char_config, alphabet, encoding):
    return CharClassifier.initialize(char_config, alphabet, encoding, seed=7)


def smooth_char_model(alphabet, encoding, seed):
    """A char model that is almost linear in its input.

    One convolution window spans the whole word, there is no highway layer
    and the embeddings are small, so first-order estimates are nearly exact.
    """
    config = CharModelConfig(
        char_dim=4,
        kernel_width=encoding.max_chars,
        kernel_count=6,
        highway_layers=0,
        hidden_size=5,
        num_classes=2,
        init_scale=0.02,
    )
    return CharClassifier.initialize(config, alphabet, encoding, seed=seed)


@pytest.fixture
def char_examples(raw_char_examples, alphabet, encoding):
    return encode_examples(raw_char_examples, alphabet, encoding.max_chars, encoding.max_words)


@pytest.fixture
def eligible_examples(char_model, char_examples):
    return as_predicted(char_model, char_examples)


@pytest.fixture
def raw_word_examples():
    return [LabeledExample(text=text, label=label, uid=i) for i, (text, label) in enumerate(WORD_TEXTS)]


@pytest.fixture
def word_model(raw_word_examples):
    config = WordModelConfig(word_dim=3, kernel_widths=(2, 3), kernels_per_width=3, num_classes=2)
    index = build_word_index(raw_word_examples, config.max_vocab)
    return WordClassifier.initialize(config, index, seed=5)


@pytest.fixture
def word_examples(word_model, raw_word_examples):
    encoded = encode_word_examples(raw_word_examples, word_model.vocab, word_model.config.min_length)
    return as_predicted(word_model, encoded)


@pytest.fixture
def lexical_resources():
    """Adjectives cluster together; nouns sit on another axis."""
    vectors = {
        "great": [1.0, 0.1, 0.0],
        "good": [0.95, 0.2, 0.0],
        "pleasant": [0.9, 0.25, 0.05],
        "terrible": [0.9, -0.3, 0.1],
        "awful": [0.85, -0.35, 0.1],
        "bad": [0.9, -0.2, 0.0],
        "dull": [0.8, -0.3, 0.2],
        "film": [0.0, 0.1, 1.0],
        "movie": [0.05, 0.1, 0.98],
        "story": [0.1, 0.0, 0.9],
        "acting": [0.2, 0.3, 0.8],
        "the": [0.3, 0.3, 0.3],
        "a": [0.3, 0.3, 0.31],
    }
    table = EmbeddingTable(tuple(vectors), np.array(list(vectors.values())))
    tags = {word: "JJ" for word in ("great", "good", "pleasant", "terrible", "awful", "bad", "dull")}
    tags.update({word: "NN" for word in ("film", "movie", "story", "acting")})
    tags.update({"the": "DT", "a": "DT"})
    stopwords = frozenset({"the", "a", "and", "was", "with"})
    return LexicalResources(table, PosLexicon(tags), stopwords)
