"""HotFlip: white-box adversarial edits for text classifiers.

Character-level flip/insert/delete attacks scored with one gradient pass,
beam and greedy search, a gradient-free key* baseline, adversarial training,
and constrained word substitutions against a convolutional sentence model.
"""

from hotflip.config import (
    Config,
    AttackConfig,
    AdvTrainConfig,
    TrainConfig,
    CharModelConfig,
    WordModelConfig,
    WordConstraintConfig,
)
from hotflip.errors import HotflipError
from hotflip.corpus import Alphabet, OneHotText, LabeledExample, encode, decode
from hotflip.classifiers import CharClassifier, WordClassifier, QueryCounter
from hotflip.checkpoint import save_checkpoint, load_checkpoint
from hotflip.edits import EditOp, enumerate_edits, score_edits, apply_edit
from hotflip.attack import beam_attack, greedy_attack, keystar_attack, attack_dataset
from hotflip.training import train, evaluate
from hotflip.robustness import adversarial_train, robustness_report
from hotflip.wordattack import LexicalResources, word_attack, constraint_filter
from hotflip.analysis import success_vs_confidence, edit_statistics, nearest_neighbors

__all__ = [
    "Config",
    "AttackConfig",
    "AdvTrainConfig",
    "TrainConfig",
    "CharModelConfig",
    "WordModelConfig",
    "WordConstraintConfig",
    "HotflipError",
    "Alphabet",
    "OneHotText",
    "LabeledExample",
    "encode",
    "decode",
    "CharClassifier",
    "WordClassifier",
    "QueryCounter",
    "save_checkpoint",
    "load_checkpoint",
    "EditOp",
    "enumerate_edits",
    "score_edits",
    "apply_edit",
    "beam_attack",
    "greedy_attack",
    "keystar_attack",
    "attack_dataset",
    "train",
    "evaluate",
    "adversarial_train",
    "robustness_report",
    "LexicalResources",
    "word_attack",
    "constraint_filter",
    "success_vs_confidence",
    "edit_statistics",
    "nearest_neighbors",
]
