"""Attackable text classifiers built on diffcore.

``CharClassifier`` is a desk-scale CharCNN-highway-LSTM document classifier and
``WordClassifier`` a Kim-style convolutional sentence classifier. Both accept
either index inputs (embedding lookup, used for training) or dense one-hot
inputs (matrix product with the embedding table, used by the attacks), so the
loss gradient is available at the one-hot leaves.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hotflip import diffcore as dc
from hotflip.config import CharModelConfig, EncodingConfig, WordModelConfig, require_valid, substream
from hotflip.corpus import Alphabet, LabeledExample, OneHotText, WordIndex, WordSequence, encode
from hotflip.diffcore import Tape, Tensor
from hotflip.errors import DegenerateInputError, DimensionError


@dataclass
class QueryCounter:
    """Forward and backward passes spent by one consumer."""

    forward: int = 0
    backward: int = 0

    def add(self, forward: int = 0, backward: int = 0) -> None:
        self.forward += forward
        self.backward += backward


@dataclass
class GradientField:
    """Loss gradient at the one-hot input, plus what the same pass revealed."""

    grad: np.ndarray
    loss: float
    probabilities: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grad.shape

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.probabilities))


@dataclass
class Batch:
    """Stacked model inputs for a list of examples."""

    ids: np.ndarray  # char: (B, m, n); word: (B, T)
    labels: np.ndarray  # (B,)
    num_words: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.labels)


class Classifier:
    """Shared plumbing: parameter binding, batching and forward passes."""

    kind = ""

    def __init__(self, params: dict[str, np.ndarray]):
        self.params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}
        for value in self.params.values():
            value.setflags(write=False)

    @property
    def num_classes(self) -> int:
        raise NotImplementedError

    @property
    def input_size(self) -> int:
        """Width of one one-hot slice (alphabet or vocabulary size)."""
        raise NotImplementedError

    def with_params(self, params: dict[str, np.ndarray]) -> "Classifier":
        raise NotImplementedError

    def bind(self, tape: Tape, trainable: bool = False) -> dict[str, Tensor]:
        return {
            name: tape.leaf(value, requires_grad=trainable, name=name)
            for name, value in self.params.items()
        }

    def clean_params(self, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Hook applied after every parameter update."""
        return params

    def batch(self, examples: Sequence[LabeledExample]) -> Batch:
        raise NotImplementedError

    def logits(
        self,
        tape: Tape,
        weights: dict[str, Tensor],
        batch: Batch,
        onehot: Tensor | None = None,
        embedding_noise: np.ndarray | None = None,
    ) -> Tensor:
        embedded = self.embed(tape, weights, batch, onehot)
        if embedding_noise is not None:
            embedded = dc.add(embedded, tape.leaf(embedding_noise))
        return self.logits_from_embedded(tape, weights, embedded, batch)

    def embed(self, tape: Tape, weights: dict[str, Tensor], batch: Batch, onehot: Tensor | None) -> Tensor:
        raise NotImplementedError

    def logits_from_embedded(
        self, tape: Tape, weights: dict[str, Tensor], embedded: Tensor, batch: Batch
    ) -> Tensor:
        raise NotImplementedError

    def embedding_table(self) -> np.ndarray:
        raise NotImplementedError

    def onehot_batch(self, inputs: Sequence[OneHotText | WordSequence]) -> np.ndarray:
        return np.stack([x.onehot(self.input_size) if isinstance(x, WordSequence) else x.onehot() for x in inputs])


def _embed_lookup(tape: Tape, table: Tensor, ids: np.ndarray, onehot: Tensor | None) -> Tensor:
    """Embedding via gather for index inputs, via one-hot x table otherwise."""
    if onehot is None:
        return dc.gather_rows(table, ids)
    shape = onehot.shape
    if shape[-1] != table.shape[0]:
        raise DimensionError(f"one-hot width {shape[-1]} does not match table {table.shape}")
    flat = dc.reshape(onehot, (-1, shape[-1]))
    return dc.reshape(dc.matmul(flat, table), (*shape[:-1], table.shape[1]))


class CharClassifier(Classifier):
    """One-hot chars -> embedding -> conv -> max-over-time -> highway -> LSTM -> logits."""

    kind = "char"

    def __init__(
        self,
        config: CharModelConfig,
        alphabet: Alphabet,
        encoding: EncodingConfig,
        params: dict[str, np.ndarray],
    ):
        super().__init__(params)
        self.config = config
        self.alphabet = alphabet
        self.encoding = encoding

    @classmethod
    def initialize(
        cls,
        config: CharModelConfig,
        alphabet: Alphabet,
        encoding: EncodingConfig,
        seed: int,
    ) -> "CharClassifier":
        require_valid(config, encoding)
        if encoding.max_chars < config.kernel_width:
            raise DegenerateInputError(
                f"kernel width {config.kernel_width} exceeds max_chars {encoding.max_chars}"
            )
        rng = substream(seed, "init")
        scale = config.init_scale
        d, w, k, h = config.char_dim, config.kernel_width, config.kernel_count, config.hidden_size

        params = {
            "char_embedding": rng.normal(0.0, scale, (alphabet.size, d)),
            "conv_kernels": rng.uniform(-1, 1, (w, d, k)) / np.sqrt(w * d),
            "conv_bias": np.zeros(k),
        }
        for layer in range(config.highway_layers):
            params[f"highway{layer}_gate_w"] = rng.uniform(-1, 1, (k, k)) / np.sqrt(k)
            params[f"highway{layer}_gate_b"] = np.full(k, -2.0)
            params[f"highway{layer}_transform_w"] = rng.uniform(-1, 1, (k, k)) / np.sqrt(k)
            params[f"highway{layer}_transform_b"] = np.zeros(k)
        inputs = k
        for layer in range(config.lstm_layers):
            params[f"lstm{layer}_input_w"] = rng.uniform(-1, 1, (inputs, 4 * h)) / np.sqrt(inputs)
            params[f"lstm{layer}_hidden_w"] = rng.uniform(-1, 1, (h, 4 * h)) / np.sqrt(h)
            bias = np.zeros(4 * h)
            bias[h : 2 * h] = 1.0  # forget gate
            params[f"lstm{layer}_bias"] = bias
            inputs = h
        params["output_w"] = rng.uniform(-1, 1, (h, config.num_classes)) / np.sqrt(h)
        params["output_b"] = np.zeros(config.num_classes)
        return cls(config, alphabet, encoding, params)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def input_size(self) -> int:
        return self.alphabet.size

    def with_params(self, params: dict[str, np.ndarray]) -> "CharClassifier":
        return CharClassifier(self.config, self.alphabet, self.encoding, params)

    def encode(self, text: str) -> OneHotText:
        return encode(
            text,
            self.alphabet,
            self.encoding.max_chars,
            self.encoding.max_words,
            self.encoding.lowercase,
        )

    def batch(self, examples: Sequence[LabeledExample]) -> Batch:
        return self.batch_inputs([ex.x for ex in examples], [ex.label for ex in examples])

    def batch_inputs(self, inputs: Sequence[OneHotText], labels: Sequence[int] | None = None) -> Batch:
        expected = (self.encoding.max_words, self.encoding.max_chars)
        for x in inputs:
            if not isinstance(x, OneHotText) or x.chars.shape != expected:
                raise DimensionError(f"char model expects encoded {expected} documents")
        labels = np.zeros(len(inputs), dtype=np.int64) if labels is None else np.asarray(labels)
        return Batch(
            ids=np.stack([x.chars for x in inputs]),
            labels=labels.astype(np.int64),
            num_words=np.array([x.num_words for x in inputs], dtype=np.int64),
        )

    def embedding_table(self) -> np.ndarray:
        return self.params["char_embedding"]

    def embed(self, tape: Tape, weights: dict[str, Tensor], batch: Batch, onehot: Tensor | None) -> Tensor:
        return _embed_lookup(tape, weights["char_embedding"], batch.ids, onehot)

    def word_features(self, weights: dict[str, Tensor], embedded: Tensor) -> Tensor:
        """Highway output for (words, n, d) character embeddings -> (words, k)."""
        conv = dc.conv1d(embedded, weights["conv_kernels"], self.config.kernel_width)
        conv = dc.tanh(dc.add(conv, weights["conv_bias"]))
        z = dc.max_over_time(conv)
        for layer in range(self.config.highway_layers):
            gate = dc.sigmoid(dc.affine(z, weights[f"highway{layer}_gate_w"], weights[f"highway{layer}_gate_b"]))
            transform = dc.relu(
                dc.affine(z, weights[f"highway{layer}_transform_w"], weights[f"highway{layer}_transform_b"])
            )
            # gate * transform + (1 - gate) * z
            z = dc.add(z, dc.mul(gate, dc.sub(transform, z)))
        return z

    def _lstm(self, tape: Tape, weights: dict[str, Tensor], sequence: Tensor, layer: int) -> Tensor:
        batch, steps, width = sequence.shape
        h = self.config.hidden_size
        projected = dc.matmul(dc.reshape(sequence, (batch * steps, width)), weights[f"lstm{layer}_input_w"])
        projected = dc.reshape(projected, (batch, steps, 4 * h))
        hidden = tape.leaf(np.zeros((batch, h)))
        cell = tape.leaf(np.zeros((batch, h)))
        outputs = []
        for t in range(steps):
            gates = dc.add(
                dc.add(dc.take(projected, t, axis=1), dc.matmul(hidden, weights[f"lstm{layer}_hidden_w"])),
                weights[f"lstm{layer}_bias"],
            )
            in_gate = dc.sigmoid(dc.slice_last(gates, 0, h))
            forget_gate = dc.sigmoid(dc.slice_last(gates, h, 2 * h))
            candidate = dc.tanh(dc.slice_last(gates, 2 * h, 3 * h))
            out_gate = dc.sigmoid(dc.slice_last(gates, 3 * h, 4 * h))
            cell = dc.add(dc.mul(forget_gate, cell), dc.mul(in_gate, candidate))
            hidden = dc.mul(out_gate, dc.tanh(cell))
            outputs.append(hidden)
        return dc.stack(outputs, axis=1)

    def logits_from_embedded(
        self, tape: Tape, weights: dict[str, Tensor], embedded: Tensor, batch: Batch
    ) -> Tensor:
        size, m, n, d = embedded.shape
        words = self.word_features(weights, dc.reshape(embedded, (size * m, n, d)))
        sequence = dc.reshape(words, (size, m, words.shape[-1]))
        for layer in range(self.config.lstm_layers):
            sequence = self._lstm(tape, weights, sequence, layer)
        # state after the last real word; empty documents read step 0
        last = dc.pick_steps(sequence, np.maximum(batch.num_words - 1, 0))
        return dc.affine(last, weights["output_w"], weights["output_b"])

    def word_representations(self, words: Sequence[str]) -> np.ndarray:
        """Highway-layer vectors for single words, shape (len(words), k)."""
        if not words:
            return np.zeros((0, self.config.kernel_count))
        n = self.encoding.max_chars
        ids = np.full((len(words), n), self.alphabet.pad_index, dtype=np.int64)
        for row, word in enumerate(words):
            word = word.lower() if self.encoding.lowercase else word
            word = word[: n - 1]
            ids[row, : len(word)] = [self.alphabet.index(ch) for ch in word]
        tape = Tape()
        weights = self.bind(tape)
        embedded = dc.gather_rows(weights["char_embedding"], ids)
        return np.array(self.word_features(weights, embedded).value)


class WordClassifier(Classifier):
    """Kim CNN: one-hot words -> embedding -> parallel convs -> max-over-time -> dense."""

    kind = "word"

    def __init__(self, config: WordModelConfig, vocab: WordIndex, params: dict[str, np.ndarray]):
        super().__init__(params)
        self.config = config
        self.vocab = vocab

    @classmethod
    def initialize(
        cls,
        config: WordModelConfig,
        vocab: WordIndex,
        seed: int,
        pretrained: "dict[str, np.ndarray] | None" = None,
    ) -> "WordClassifier":
        """Random init; rows of words found in ``pretrained`` are copied from it."""
        require_valid(config)
        rng = substream(seed, "init")
        d, k = config.word_dim, config.kernels_per_width
        embedding = rng.uniform(-config.init_scale, config.init_scale, (len(vocab), d))
        embedding[vocab.pad_index] = 0.0
        if pretrained:
            for i, word in enumerate(vocab.words):
                vector = pretrained.get(word)
                if vector is not None:
                    if len(vector) != d:
                        raise DimensionError(f"pretrained vectors have dim {len(vector)}, model expects {d}")
                    embedding[i] = vector
        params = {"word_embedding": embedding}
        for width in config.kernel_widths:
            params[f"conv{width}_kernels"] = rng.uniform(-1, 1, (width, d, k)) / np.sqrt(width * d)
            params[f"conv{width}_bias"] = np.zeros(k)
        features = k * len(config.kernel_widths)
        params["output_w"] = rng.uniform(-1, 1, (features, config.num_classes)) / np.sqrt(features)
        params["output_b"] = np.zeros(config.num_classes)
        return cls(config, vocab, params)

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    @property
    def input_size(self) -> int:
        return len(self.vocab)

    def with_params(self, params: dict[str, np.ndarray]) -> "WordClassifier":
        return WordClassifier(self.config, self.vocab, params)

    def batch(self, examples: Sequence[LabeledExample]) -> Batch:
        return self.batch_inputs([ex.x for ex in examples], [ex.label for ex in examples])

    def batch_inputs(self, inputs: Sequence[WordSequence], labels: Sequence[int] | None = None) -> Batch:
        if any(not isinstance(x, WordSequence) or x.length == 0 for x in inputs):
            raise DegenerateInputError("word model needs encoded, non-empty sentences")
        width = max([self.config.min_length] + [len(x.ids) for x in inputs])
        ids = np.full((len(inputs), width), self.vocab.pad_index, dtype=np.int64)
        for row, x in enumerate(inputs):
            ids[row, : len(x.ids)] = x.ids
        labels = np.zeros(len(inputs), dtype=np.int64) if labels is None else np.asarray(labels)
        lengths = np.array([len(x.ids) for x in inputs], dtype=np.int64)
        return Batch(ids=ids, labels=labels.astype(np.int64), num_words=lengths)

    def onehot_batch(self, inputs: Sequence[WordSequence]) -> np.ndarray:
        width = max([self.config.min_length] + [len(x.ids) for x in inputs])
        dense = np.zeros((len(inputs), width, self.input_size))
        dense[..., self.vocab.pad_index] = 1.0
        for row, x in enumerate(inputs):
            dense[row, : len(x.ids)] = x.onehot(self.input_size)
        return dense

    def pad_onehot(self, onehots: np.ndarray) -> np.ndarray:
        """Pad a (B, T, |vocab|) one-hot stack to the model's minimum length."""
        missing = self.config.min_length - onehots.shape[1]
        if missing <= 0:
            return onehots
        pad = np.zeros((onehots.shape[0], missing, onehots.shape[2]))
        pad[..., self.vocab.pad_index] = 1.0
        return np.concatenate([onehots, pad], axis=1)

    def embedding_table(self) -> np.ndarray:
        return self.params["word_embedding"]

    def window_mask(self, batch: Batch, shape: tuple[int, ...], width: int) -> np.ndarray | None:
        """Zero the conv windows a sentence only has because of batch-level padding.

        A sentence of length L owns ``max(L, min_length) - width + 1`` windows
        whatever else shares its batch. Relu outputs are non-negative, so zeroed
        windows never win the max over owned ones.
        """
        if len(batch.num_words) != shape[0]:
            return None
        owned = np.maximum(batch.num_words, self.config.min_length) - width + 1
        valid = np.arange(shape[1])[None, :] < owned[:, None]
        if valid.all():
            return None
        return np.broadcast_to(valid[:, :, None], shape).astype(np.float64)

    def clean_params(self, params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Pin the PAD row of the embedding table to zero."""
        embedding = params["word_embedding"].copy()
        embedding[self.vocab.pad_index] = 0.0
        return {**params, "word_embedding": embedding}

    def embed(self, tape: Tape, weights: dict[str, Tensor], batch: Batch, onehot: Tensor | None) -> Tensor:
        return _embed_lookup(tape, weights["word_embedding"], batch.ids, onehot)

    def logits_from_embedded(
        self, tape: Tape, weights: dict[str, Tensor], embedded: Tensor, batch: Batch
    ) -> Tensor:
        if embedded.shape[1] < self.config.min_length:
            raise DegenerateInputError("sentence shorter than the widest kernel; pad it first")
        pooled = []
        for width in self.config.kernel_widths:
            conv = dc.conv1d(embedded, weights[f"conv{width}_kernels"], width)
            conv = dc.relu(dc.add(conv, weights[f"conv{width}_bias"]))
            mask = self.window_mask(batch, conv.shape, width)
            if mask is not None:
                conv = dc.mul(conv, tape.leaf(mask))
            pooled.append(dc.max_over_time(conv))
        return dc.affine(dc.concat(pooled, axis=-1), weights["output_w"], weights["output_b"])


# --- functional surface ------------------------------------------------------


def _onehot_pass(
    model: Classifier,
    inputs: Sequence[OneHotText | WordSequence],
    labels: Sequence[int],
    counter: QueryCounter | None,
    need_gradient: bool,
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
    """Forward (and optionally backward) with one-hot leaves.

    Returns per-example losses, the gradient w.r.t. the stacked one-hot input
    (scaled back to per-example losses) and class probabilities.
    """
    tape = Tape()
    weights = model.bind(tape)
    batch = model.batch_inputs(list(inputs), labels)
    dense = model.onehot_batch(inputs)
    onehot = tape.leaf(dense, requires_grad=need_gradient, name="x")
    logits = model.logits(tape, weights, batch, onehot=onehot)
    log_probs = dc.log_softmax(logits.value)
    rows = np.arange(len(batch))
    losses = -log_probs[rows, batch.labels]
    if counter is not None:
        counter.add(forward=len(batch))
    grad = None
    if need_gradient:
        loss = dc.softmax_cross_entropy(logits, batch.labels)
        tape.backward(loss)
        grad = onehot.grad * len(batch)
        if counter is not None:
            counter.add(backward=len(batch))
    return losses, grad, np.exp(log_probs)


def char_forward(model: CharClassifier, x: OneHotText) -> np.ndarray:
    """Logits for one document."""
    tape = Tape()
    weights = model.bind(tape)
    onehot = tape.leaf(x.onehot()[None])
    return np.array(model.logits(tape, weights, model.batch_inputs([x]), onehot=onehot).value[0])


def char_highway(model: CharClassifier, x: OneHotText) -> np.ndarray:
    """Highway output of every word slot of a document, shape (m, k)."""
    tape = Tape()
    weights = model.bind(tape)
    embedded = model.embed(tape, weights, model.batch_inputs([x]), None)
    _, m, n, d = embedded.shape
    return np.array(model.word_features(weights, dc.reshape(embedded, (m, n, d))).value)


def word_forward(model: WordClassifier, words: WordSequence | np.ndarray) -> np.ndarray:
    """Logits for one sentence given as a WordSequence or a (T, |vocab|) one-hot array."""
    if isinstance(words, WordSequence):
        dense = words.onehot(model.input_size)
    else:
        dense = np.asarray(words, dtype=np.float64)
    if dense.ndim != 2 or dense.shape[0] == 0:
        raise DegenerateInputError("word_forward needs a non-empty (T, |vocab|) sentence")
    length = dense.shape[0]
    dense = model.pad_onehot(dense[None])
    tape = Tape()
    weights = model.bind(tape)
    ids = np.argmax(dense, axis=-1)
    onehot = tape.leaf(dense)
    batch = Batch(ids=ids, labels=np.zeros(1, dtype=np.int64), num_words=np.array([length], dtype=np.int64))
    return np.array(model.logits(tape, weights, batch, onehot=onehot).value[0])


def loss(model: Classifier, example: LabeledExample, counter: QueryCounter | None = None) -> float:
    """J(x, y): softmax cross-entropy of one example."""
    losses, _, _ = _onehot_pass(model, [example.x], [example.label], counter, need_gradient=False)
    return float(losses[0])


def batch_losses(
    model: Classifier,
    inputs: Sequence[OneHotText | WordSequence],
    label: int,
    counter: QueryCounter | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Losses and probabilities of several candidate inputs sharing one label."""
    losses, _, probs = _onehot_pass(model, inputs, [label] * len(inputs), counter, need_gradient=False)
    return losses, probs


def input_gradient(
    model: Classifier,
    example: LabeledExample,
    counter: QueryCounter | None = None,
) -> GradientField:
    """dJ/dx at the one-hot input: exactly one forward and one backward pass."""
    return input_gradient_of(model, example.x, example.label, counter)


def input_gradient_of(
    model: Classifier,
    x: OneHotText | WordSequence,
    label: int,
    counter: QueryCounter | None = None,
) -> GradientField:
    losses, grad, probs = _onehot_pass(model, [x], [label], counter, need_gradient=True)
    grad = grad[0]
    if isinstance(x, WordSequence):
        grad = grad[: len(x.ids)]
    return GradientField(grad=grad, loss=float(losses[0]), probabilities=probs[0])


def batch_input_gradients(
    model: Classifier,
    examples: Sequence[LabeledExample],
    counter: QueryCounter | None = None,
) -> list[GradientField]:
    """Per-example gradient fields from one batched forward/backward."""
    return input_gradients_of(model, [ex.x for ex in examples], [ex.label for ex in examples], counter)


def input_gradients_of(
    model: Classifier,
    inputs: Sequence[OneHotText | WordSequence],
    labels: Sequence[int],
    counter: QueryCounter | None = None,
) -> list[GradientField]:
    if not inputs:
        return []
    losses, grad, probs = _onehot_pass(model, inputs, labels, counter, need_gradient=True)
    fields = []
    for i, x in enumerate(inputs):
        g = grad[i][: len(x.ids)] if isinstance(x, WordSequence) else grad[i]
        fields.append(GradientField(grad=g, loss=float(losses[i]), probabilities=probs[i]))
    return fields


def predict_proba(
    model: Classifier,
    inputs: Sequence[OneHotText | WordSequence],
    counter: QueryCounter | None = None,
    batch_size: int = 256,
) -> np.ndarray:
    """Class probabilities, shape (len(inputs), classes), via the index path."""
    if not inputs:
        return np.zeros((0, model.num_classes))
    chunks = []
    for start in range(0, len(inputs), batch_size):
        chunk = list(inputs[start : start + batch_size])
        tape = Tape()
        weights = model.bind(tape)
        logits = model.logits(tape, weights, model.batch_inputs(chunk))
        chunks.append(dc.softmax(logits.value))
    if counter is not None:
        counter.add(forward=len(inputs))
    return np.concatenate(chunks, axis=0)


def predict(model: Classifier, x: OneHotText | WordSequence, counter: QueryCounter | None = None) -> tuple[int, float]:
    """(class, confidence) where confidence is the predicted class probability."""
    probs = predict_proba(model, [x], counter)[0]
    label = int(np.argmax(probs))
    return label, float(probs[label])
