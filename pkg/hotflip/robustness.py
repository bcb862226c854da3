"""Adversarial training and the clean-error / attack-success comparison."""

import logging
import math
from dataclasses import replace
from typing import Sequence

import numpy as np
from tqdm import tqdm

from hotflip import diffcore as dc
from hotflip.attack import attack_dataset, keystar_search
from hotflip.classifiers import CharClassifier, QueryCounter, batch_input_gradients
from hotflip.config import AdvTrainConfig, AttackConfig, TrainConfig, require_valid, substream
from hotflip.corpus import LabeledExample, WordVocab, document_characters
from hotflip.diffcore import Tape
from hotflip.edits import EditCatalog
from hotflip.errors import DimensionError
from hotflip.models import RobustnessRow
from hotflip.training import BatchPart, TrainingResult, evaluate, train

logger = logging.getLogger(__name__)


def hotflip_training_examples(
    model: CharClassifier,
    examples: Sequence[LabeledExample],
    flip_fraction: float,
    vocab: WordVocab | None = None,
    counter: QueryCounter | None = None,
) -> list[LabeledExample]:
    """Apply the top-scoring flips of each example all at once.

    One batched forward/backward pass gives every gradient. Each (word, slot)
    keeps its best flip, and the ``ceil(flip_fraction * characters)`` best
    slots are flipped together without re-scoring. Labels never change.
    """
    examples = list(examples)
    if flip_fraction == 0 or not examples:
        return examples
    fields = batch_input_gradients(model, examples, counter)
    catalog = EditCatalog(model.alphabet, model.encoding.max_chars, vocab, ("flip",), vocab is not None)

    adversarial = []
    for example, field in zip(examples, fields):
        x = example.x
        doc = catalog.document(x)
        if not len(doc):
            adversarial.append(example)
            continue
        scores = doc.normalized_scores(field.grad)
        # best flip per slot: sort by slot, then score descending, then char
        order = np.lexsort((doc.chars, -scores, doc.positions, doc.words))
        slots = doc.words[order] * x.n + doc.positions[order]
        first = np.concatenate([[True], slots[1:] != slots[:-1]])
        best = order[first]
        ranking = np.lexsort((doc.positions[best], doc.words[best], -scores[best]))
        count = math.ceil(round(flip_fraction * document_characters(x), 9))
        chosen = best[ranking[:count]]

        words: dict[int, list[int]] = {}
        for index in chosen:
            i, j, b = int(doc.words[index]), int(doc.positions[index]), int(doc.chars[index])
            words.setdefault(i, x.chars[i, : x.lengths[i]].tolist())[j] = b
        flipped = x
        for i, chars in sorted(words.items()):
            flipped = flipped.with_word(i, chars)
        adversarial.append(example.with_input(flipped))
    return adversarial


def embed_noise_examples(
    model: CharClassifier,
    examples: Sequence[LabeledExample],
    noise_scale: float,
    counter: QueryCounter | None = None,
) -> np.ndarray:
    """Per-word embedding perturbations along the loss gradient.

    For every real word the noise over its character embeddings has Frobenius
    norm ``noise_scale * ||E_word||_F``. Words whose gradient vanishes get none.
    Returns an array shaped like the batch's embedded input (B, m, n, d).
    """
    batch = model.batch(examples)
    tape = Tape()
    weights = model.bind(tape)
    embedded = model.embed(tape, weights, batch, None)
    leaf = tape.leaf(embedded.value, requires_grad=True, name="embedded")
    logits = model.logits_from_embedded(tape, weights, leaf, batch)
    tape.backward(dc.softmax_cross_entropy(logits, batch.labels))
    if counter is not None:
        counter.add(forward=len(batch), backward=len(batch))

    values = embedded.value
    grads = leaf.grad * len(batch)
    noise = np.zeros_like(values)
    if noise_scale == 0:
        return noise
    for b, example in enumerate(examples):
        x = example.x
        for i in range(x.num_words):
            length = x.lengths[i]
            g = grads[b, i, :length]
            g_norm = np.linalg.norm(g)
            if g_norm == 0:
                continue
            epsilon = noise_scale * np.linalg.norm(values[b, i, :length])
            noise[b, i, :length] = epsilon * g / g_norm
    return noise


def perturbed_losses(
    model: CharClassifier,
    examples: Sequence[LabeledExample],
    noise: np.ndarray | None = None,
) -> np.ndarray:
    """Per-example losses with ``noise`` added at the embedding layer."""
    batch = model.batch(examples)
    tape = Tape()
    weights = model.bind(tape)
    logits = model.logits(tape, weights, batch, embedding_noise=noise)
    log_probs = dc.log_softmax(logits.value)
    return -log_probs[np.arange(len(batch)), batch.labels]


def keystar_training_examples(
    model: CharClassifier,
    examples: Sequence[LabeledExample],
    flip_fraction: float,
    queries: int,
    rng: np.random.Generator,
) -> list[LabeledExample]:
    """Black-box counterparts spending the same flip budget as the white-box ones."""
    config = AttackConfig(
        budget=flip_fraction,
        tau=0.0,
        vocab_constraint=False,
        keystar_queries=queries,
        check_every_step=False,
    )
    adversarial = []
    for example in examples:
        _, x = keystar_search(model, example, config, rng)
        adversarial.append(example.with_input(x))
    return adversarial


def adversarial_train(
    model: CharClassifier,
    train_set: Sequence[LabeledExample],
    dev_set: Sequence[LabeledExample],
    config: TrainConfig,
    adv_config: AdvTrainConfig,
    vocab: WordVocab | None = None,
    verbose: bool = True,
) -> TrainingResult:
    """Train with adversarial counterparts added to every mini-batch.

    ``concat`` mixing updates on clean plus adversarial examples in every batch;
    ``alternate`` uses clean batches and adversarial batches in turn.
    """
    require_valid(config, adv_config)
    if adv_config.method == "none":
        return train(model, train_set, dev_set, config, verbose=verbose)

    counter = QueryCounter()
    constraint_vocab = vocab if adv_config.vocab_constraint else None

    def augment(current, examples, epoch, batch_index):
        if adv_config.mixing == "alternate" and batch_index % 2 == 0:
            return [BatchPart(examples)]
        if adv_config.method == "hotflip-white":
            adversarial = BatchPart(
                hotflip_training_examples(current, examples, adv_config.flip_fraction, constraint_vocab, counter)
            )
        elif adv_config.method == "keystar-black":
            rng = substream(config.seed, "advtrain", epoch, batch_index)
            adversarial = BatchPart(
                keystar_training_examples(
                    current, examples, adv_config.flip_fraction, adv_config.keystar_queries, rng
                )
            )
        else:
            noise = embed_noise_examples(current, examples, adv_config.noise_scale, counter)
            adversarial = BatchPart(list(examples), noise)
        if adv_config.mixing == "alternate":
            return [adversarial]
        return [BatchPart(examples), adversarial]

    logger.info("adversarial training with %s (%s mixing)", adv_config.method, adv_config.mixing)
    result = train(model, train_set, dev_set, config, augment=augment, verbose=verbose)
    result.counter = counter
    return result


def robustness_report(
    models: Sequence[tuple[str, CharClassifier]],
    test_set: Sequence[LabeledExample],
    config: AttackConfig,
    vocab: WordVocab | None,
    flip_only: bool = True,
    jobs: int = 1,
    verbose: bool = True,
) -> list[RobustnessRow]:
    """Clean error and beam-attack success rate per model, in input order."""
    require_valid(config)
    if flip_only:
        config = replace(config, edit_kinds=("flip",))
    shapes = {(m.alphabet.symbols, m.encoding.max_words, m.encoding.max_chars) for _, m in models}
    if len(shapes) > 1:
        raise DimensionError("robustness report needs models sharing alphabet and encoding shape")

    rows = []
    for name, model in tqdm(models, desc="Models", disable=not verbose):
        clean = evaluate(model, test_set)
        _, summary = attack_dataset(model, test_set, vocab, config, "beam", jobs=jobs, verbose=verbose)
        rows.append(
            RobustnessRow(
                model=name,
                clean_error=1.0 - clean.accuracy,
                attack_success_rate=summary.success_rate,
                mean_char_change=summary.mean_char_change,
                attack_config_hash=config.digest(),
            )
        )
        logger.info("%s: clean error %.4f, attack success %s", name, 1.0 - clean.accuracy, summary.success_rate)
    return rows
