"""Confidence curves, edit statistics and highway-layer nearest neighbours."""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np
from tqdm import tqdm

from hotflip.attack import attack_dataset
from hotflip.checkpoint import checkpoint_digest
from hotflip.classifiers import CharClassifier
from hotflip.config import EDIT_KINDS, AttackConfig, require_valid
from hotflip.corpus import LabeledExample, WordVocab
from hotflip.database import RepresentationCache
from hotflip.errors import ConfigError
from hotflip.models import (
    AttackOutcome,
    ConfidenceCurve,
    ConfidencePoint,
    EditStatistics,
    Neighbor,
    NeighborReport,
)

logger = logging.getLogger(__name__)

DEFAULT_TAUS = (0.5, 0.6, 0.7, 0.8, 0.9)
CURVE_MODES = ("reattack", "rethreshold")


def _curve_point(outcomes: Sequence[AttackOutcome], tau: float, rethreshold: bool) -> ConfidencePoint:
    eligible = [o for o in outcomes if o.eligible]
    if rethreshold:
        successes = sum(1 for o in eligible if o.succeeds_at(tau))
    else:
        successes = sum(1 for o in eligible if o.success)
    rate = successes / len(eligible) if eligible else None
    return ConfidencePoint(tau=tau, success_rate=rate, eligible=len(eligible))


def success_vs_confidence(
    model: CharClassifier,
    examples: Sequence[LabeledExample],
    vocab: WordVocab | None,
    config: AttackConfig,
    taus: Sequence[float] = DEFAULT_TAUS,
    method: str = "beam",
    mode: str = "reattack",
    jobs: int = 1,
    verbose: bool = True,
) -> ConfidenceCurve:
    """Attack success rate as the required wrong-class confidence rises.

    ``reattack`` runs one attack per threshold, since the stopping rule depends
    on it, and reports thresholds where the rate went up. ``rethreshold`` runs
    once at the highest threshold and re-reads the recorded confidences, which
    is monotone by construction.
    """
    taus = [float(t) for t in taus]
    problems = []
    if not taus:
        problems.append("at least one threshold is required")
    if taus != sorted(taus):
        problems.append("thresholds must be sorted ascending")
    if mode not in CURVE_MODES:
        problems.append(f"mode must be one of {', '.join(CURVE_MODES)}")
    if problems:
        raise ConfigError(problems)
    require_valid(*(replace(config, tau=tau) for tau in taus))

    points = []
    if mode == "rethreshold":
        outcomes, _ = attack_dataset(model, examples, vocab, replace(config, tau=taus[-1]), method, jobs, verbose)
        points = [_curve_point(outcomes, tau, rethreshold=True) for tau in taus]
    else:
        for tau in taus:
            outcomes, _ = attack_dataset(model, examples, vocab, replace(config, tau=tau), method, jobs, verbose)
            points.append(_curve_point(outcomes, tau, rethreshold=False))

    violations = [
        current.tau
        for previous, current in zip(points, points[1:])
        if previous.success_rate is not None
        and current.success_rate is not None
        and current.success_rate > previous.success_rate
    ]
    if violations:
        logger.warning("success rate rose at thresholds %s", violations)
    return ConfidenceCurve(method=method, mode=mode, points=points, violations=violations)


def edit_statistics(outcomes: Sequence[AttackOutcome]) -> EditStatistics:
    """Share of each edit kind over all edits of successful attacks."""
    successes = [o for o in outcomes if o.eligible and o.success]
    counts = {kind: 0 for kind in EDIT_KINDS}
    for outcome in successes:
        for kind, count in outcome.kind_counts().items():
            counts[kind] += count
    total = sum(counts.values())
    if not successes or total == 0:
        return EditStatistics(successes=len(successes), empty=True)
    return EditStatistics(
        flip=counts["flip"] / total,
        insert=counts["insert"] / total,
        delete=counts["delete"] / total,
        mean_char_change=float(np.mean([o.char_change_fraction for o in successes])),
        successes=len(successes),
        total_edits=total,
    )


class NeighborIndex:
    """Exact cosine search over highway representations of a word list."""

    def __init__(self, words: Sequence[str], vectors: np.ndarray):
        self.words = list(words)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        norms = np.linalg.norm(self.vectors, axis=1, keepdims=True)
        self._unit = np.divide(self.vectors, norms, out=np.zeros_like(self.vectors), where=norms > 0)
        self._index = {word: i for i, word in enumerate(self.words)}

    def __len__(self) -> int:
        return len(self.words)

    def search(self, query: str, vector: np.ndarray, k: int) -> NeighborReport:
        norm = np.linalg.norm(vector)
        unit = vector / norm if norm > 0 else np.zeros_like(vector)
        similarities = self._unit @ unit
        own = self._index.get(query)
        order = np.argsort(-similarities, kind="stable")
        neighbors = []
        for i in order:
            if i == own:
                continue
            if len(neighbors) == k:
                break
            neighbors.append(Neighbor(word=self.words[i], cosine=float(similarities[i])))
        return NeighborReport(query=query, in_vocab=own is not None, neighbors=neighbors)


def vocabulary_representations(
    model: CharClassifier,
    words: Sequence[str],
    checkpoint: str | Path | None = None,
    batch_size: int = 512,
    verbose: bool = True,
) -> NeighborIndex:
    """Highway outputs of ``words``, read from or written to the checkpoint's cache."""
    words = list(words)
    cache = RepresentationCache.beside(checkpoint) if checkpoint else None
    digest = checkpoint_digest(checkpoint) if checkpoint else None

    if cache:
        with cache:
            if cache.is_current(digest):
                cached_words, vectors = cache.load()
                if cached_words == words:
                    logger.info("Using cached representations from %s", cache.db_path)
                    return NeighborIndex(words, vectors)

    chunks = []
    starts = range(0, len(words), batch_size)
    for start in tqdm(starts, desc="Representations", disable=not verbose):
        chunks.append(model.word_representations(words[start : start + batch_size]))
    vectors = np.concatenate(chunks) if chunks else np.zeros((0, model.config.kernel_count))

    if cache:
        with cache:
            cache.store(digest, words, vectors)
    return NeighborIndex(words, vectors)


def nearest_neighbors(
    model: CharClassifier,
    query: str,
    k: int,
    index: NeighborIndex,
) -> NeighborReport:
    """Top-k vocabulary words by cosine of highway representations.

    The query itself is left out when it belongs to the vocabulary.
    """
    if k < 0:
        raise ConfigError([f"k must be non-negative, got {k}"])
    key = query.lower() if model.encoding.lowercase else query
    vector = model.word_representations([key])[0]
    return index.search(key, vector, k)
