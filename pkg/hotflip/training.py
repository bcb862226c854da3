"""Mini-batch SGD training and evaluation for both classifiers."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from tqdm import tqdm

from hotflip import diffcore as dc
from hotflip.classifiers import Classifier, QueryCounter, predict_proba
from hotflip.config import TrainConfig, require_valid, substream
from hotflip.corpus import LabeledExample
from hotflip.diffcore import Tape
from hotflip.errors import ContractError, NonFiniteError, TrainingDivergedError
from hotflip.models import EpochMetrics, EvaluationResult

logger = logging.getLogger(__name__)


@dataclass
class BatchPart:
    """A slice of a training step; ``noise`` perturbs the embedding layer."""

    examples: list[LabeledExample]
    noise: Optional[np.ndarray] = None


# (model at current params, clean batch, epoch, batch index) -> parts of the step
Augmenter = Callable[[Classifier, list[LabeledExample], int, int], list[BatchPart]]


@dataclass
class TrainingResult:
    model: Classifier
    history: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    counter: QueryCounter = field(default_factory=QueryCounter)


def clip_gradients(grads: dict[str, np.ndarray], threshold: float) -> float:
    """Rescale ``grads`` in place to global L2 norm <= threshold; returns the original norm."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > threshold:
        factor = threshold / norm
        for name in grads:
            grads[name] = grads[name] * factor
    return norm


def batch_gradients(model: Classifier, parts: Sequence[BatchPart]) -> tuple[float, dict[str, np.ndarray]]:
    """Mean loss over all examples of all parts and its parameter gradients."""
    parts = [part for part in parts if part.examples]
    total = sum(len(part.examples) for part in parts)
    tape = Tape()
    weights = model.bind(tape, trainable=True)
    loss = None
    for part in parts:
        batch = model.batch(part.examples)
        logits = model.logits(tape, weights, batch, embedding_noise=part.noise)
        term = dc.scale(dc.softmax_cross_entropy(logits, batch.labels), len(part.examples) / total)
        loss = term if loss is None else dc.add(loss, term)
    grads = tape.backward(loss)
    return float(loss.value), grads


def evaluate(model: Classifier, examples: Sequence[LabeledExample]) -> EvaluationResult:
    """Accuracy and confusion matrix (rows: true class, columns: prediction)."""
    confusion = np.zeros((model.num_classes, model.num_classes), dtype=np.int64)
    if not examples:
        return EvaluationResult(accuracy=0.0, confusion=confusion.tolist(), count=0)
    probs = predict_proba(model, [ex.x for ex in examples])
    predicted = np.argmax(probs, axis=1)
    for example, guess in zip(examples, predicted):
        confusion[example.label, guess] += 1
    accuracy = float(np.trace(confusion)) / len(examples)
    return EvaluationResult(accuracy=accuracy, confusion=confusion.tolist(), count=len(examples))


def train(
    model: Classifier,
    train_set: Sequence[LabeledExample],
    dev_set: Sequence[LabeledExample],
    config: TrainConfig,
    augment: Augmenter | None = None,
    verbose: bool = True,
) -> TrainingResult:
    """SGD with global-norm clipping, keeping the best-dev-accuracy parameters.

    ``augment`` turns each clean mini-batch into the parts of one update
    (adversarial training); without it every update sees the clean batch.
    """
    require_valid(config)
    train_ids = {id(ex) for ex in train_set}
    if any(id(ex) in train_ids for ex in dev_set):
        raise ContractError("train and dev sets must be disjoint")

    rng = substream(config.seed, "train")
    params = {name: value.copy() for name, value in model.params.items()}
    best_params = params
    best_acc = -1.0
    best_epoch = 0
    stale = 0
    history: list[EpochMetrics] = []
    result = TrainingResult(model=model)

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        starts = range(0, len(train_set), config.batch_size)
        progress = tqdm(starts, desc=f"Epoch {epoch}", disable=not verbose, leave=False)
        for batch_index, start in enumerate(progress):
            examples = [train_set[i] for i in order[start : start + config.batch_size]]
            current = model.with_params(params)
            parts = augment(current, examples, epoch, batch_index) if augment else [BatchPart(examples)]
            try:
                batch_loss, grads = batch_gradients(current, parts)
            except NonFiniteError as exc:
                raise TrainingDivergedError(epoch, batch_index, str(exc)) from exc
            clip_gradients(grads, config.clip_threshold)
            params = model.clean_params(
                {name: params[name] - config.learning_rate * grads[name] for name in params}
            )
            if not all(np.all(np.isfinite(value)) for value in params.values()):
                raise TrainingDivergedError(epoch, batch_index, "non-finite parameters")
            losses.append(batch_loss)
            progress.set_postfix(loss=f"{batch_loss:.4f}")

        trained = model.with_params(params)
        dev_acc = evaluate(trained, dev_set).accuracy if dev_set else 0.0
        train_loss = float(np.mean(losses)) if losses else 0.0
        history.append(EpochMetrics(epoch=epoch, train_loss=train_loss, dev_acc=dev_acc))
        logger.info("epoch %d: train_loss=%.4f dev_acc=%.4f", epoch, train_loss, dev_acc)

        if not dev_set or dev_acc > best_acc:
            best_acc, best_params, best_epoch, stale = dev_acc, params, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("no dev improvement for %d epochs, stopping", stale)
                break

    result.model = model.with_params(best_params)
    result.history = history
    result.best_epoch = best_epoch
    return result
