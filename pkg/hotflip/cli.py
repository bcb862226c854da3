"""Command-line entry point: train, attack, adversarial training and analyses.

Every subcommand writes ``<out>.runconfig.json`` next to its output;
``replay <runconfig.json>`` runs it again with identical settings.
Exit codes: 0 success, 2 bad input or configuration, 3 any other failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

from hotflip.analysis import (
    CURVE_MODES,
    DEFAULT_TAUS,
    edit_statistics,
    nearest_neighbors,
    success_vs_confidence,
    vocabulary_representations,
)
from hotflip.attack import METHODS, attack_dataset
from hotflip.checkpoint import load_checkpoint, save_checkpoint
from hotflip.classifiers import CharClassifier, Classifier, WordClassifier
from hotflip.config import (
    ADV_METHODS,
    EDIT_KINDS,
    AdvTrainConfig,
    AttackConfig,
    CharModelConfig,
    Config,
    EncodingConfig,
    TrainConfig,
    WordConstraintConfig,
    WordModelConfig,
    require_valid,
)
from hotflip.corpus import (
    LabeledExample,
    build_alphabet,
    build_word_index,
    build_word_vocab,
    dev_split,
    encode_word_examples,
    load_agnews,
    load_sst_binary,
)
from hotflip.embeddings import EmbeddingTable, load_embeddings
from hotflip.errors import (
    CheckpointError,
    ConfigError,
    EncodeError,
    HotflipError,
    ParseError,
)
from hotflip.models import RunConfig
from hotflip.reports import (
    write_attack_report,
    write_curve,
    write_metrics,
    write_neighbors,
    write_robustness_report,
    write_word_report,
)
from hotflip.robustness import adversarial_train, robustness_report
from hotflip.training import TrainingResult, train
from hotflip.wordattack import LexicalResources, word_attack_dataset

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_RUNTIME = 3

INPUT_ERRORS = (ParseError, EncodeError, CheckpointError, ConfigError, OSError)


# --- data helpers -------------------------------------------------------------


def _load(path: Path, fmt: str, lowercase: bool, limit: int | None) -> list[LabeledExample]:
    loader = load_agnews if fmt == "agnews" else load_sst_binary
    examples = loader(path, lowercase=lowercase)
    if not examples:
        raise ParseError(str(path), 0, "no examples")
    return examples[:limit] if limit else examples


def _format(args: argparse.Namespace, arch: str) -> str:
    return args.format or ("agnews" if arch == "char" else "sst")


def _encode_for(model: Classifier, examples: Sequence[LabeledExample]) -> list[LabeledExample]:
    """Attach model inputs; char examples with characters outside the alphabet are skipped."""
    if isinstance(model, WordClassifier):
        return encode_word_examples(examples, model.vocab, model.config.min_length)
    encoded, skipped = [], 0
    for example in examples:
        try:
            encoded.append(example.with_input(model.encode(example.text)))
        except EncodeError:
            skipped += 1
    if skipped:
        logger.warning("Skipped %d examples with characters outside the model alphabet", skipped)
    return encoded


def _char_model(path: Path) -> CharClassifier:
    model = load_checkpoint(path)
    if not isinstance(model, CharClassifier):
        raise ConfigError([f"{path} holds a word model; this command needs a char model"])
    return model


def _attack_config(args: argparse.Namespace) -> AttackConfig:
    kinds = tuple(kind.strip() for kind in args.ops.split(",") if kind.strip())
    return AttackConfig(
        beam_width=args.beam,
        budget=args.budget,
        edit_kinds=kinds,
        tau=args.tau,
        vocab_constraint=not args.no_vocab_constraint,
        seed=args.seed,
        keystar_queries=args.queries,
        max_steps=args.max_steps,
    )


def _attack_vocab(args: argparse.Namespace, config: Config):
    if args.no_vocab_constraint:
        return None
    if not args.vocab_data:
        raise ConfigError(["--vocab-data is required unless --no-vocab-constraint is given"])
    examples = _load(config.resolve_data(args.vocab_data), args.format or "agnews", config.lowercase, None)
    return build_word_vocab(examples, lowercase=config.lowercase)


def _train_config(args: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch_size,
        learning_rate=args.lr,
        clip_threshold=args.clip,
        max_epochs=args.epochs,
        patience=args.patience,
        seed=args.seed,
    )


def _training_data(args: argparse.Namespace, config: Config, arch: str):
    fmt = _format(args, arch)
    examples = _load(config.resolve_data(args.data), fmt, config.lowercase, args.limit)
    if args.dev:
        train_set = examples
        dev_set = _load(config.resolve_data(args.dev), fmt, config.lowercase, None)
    else:
        train_set, dev_set = dev_split(examples, args.dev_fraction, args.seed)
    return train_set, dev_set


def _build_model(args: argparse.Namespace, config: Config, train_set, dev_set) -> Classifier:
    everything = list(train_set) + list(dev_set)
    num_classes = max(ex.label for ex in everything) + 1
    if args.arch == "char":
        encoding = EncodingConfig(config.max_words, config.max_chars, config.lowercase)
        alphabet = build_alphabet(everything)
        return CharClassifier.initialize(CharModelConfig(num_classes=num_classes), alphabet, encoding, args.seed)
    word_config = WordModelConfig(num_classes=num_classes)
    index = build_word_index(train_set, word_config.max_vocab)
    pretrained = None
    if args.embeddings:
        table = load_embeddings(config.resolve_data(args.embeddings))
        pretrained = table.as_dict()
        word_config = replace(word_config, word_dim=table.dimensions)
    return WordClassifier.initialize(word_config, index, args.seed, pretrained)


def _finish_training(result: TrainingResult, out: Path, verbose: bool) -> list[Path]:
    save_checkpoint(result.model, out)
    metrics = write_metrics(out.with_name(out.name + ".metrics.csv"), result.history)
    if verbose:
        print(f"\nSaved checkpoint: {out}")
        print(f"Metrics: {metrics}")
        if result.history:
            best = result.history[result.best_epoch - 1] if result.best_epoch else result.history[-1]
            print(f"Best epoch {best.epoch}: dev accuracy {best.dev_acc:.4f}")
    return [out, metrics]


# --- subcommands ----------------------------------------------------------------


def cmd_train(args: argparse.Namespace, config: Config) -> list[Path]:
    """Train a char or word classifier; writes the checkpoint and per-epoch metrics."""
    verbose = not args.quiet
    train_set, dev_set = _training_data(args, config, args.arch)
    model = _build_model(args, config, train_set, dev_set)
    train_config = _train_config(args)
    require_valid(train_config)
    if verbose:
        print(f"Training {args.arch} model on {len(train_set)} examples ({len(dev_set)} dev)")
        print("=" * 40)
    result = train(model, _encode_for(model, train_set), _encode_for(model, dev_set), train_config, verbose=verbose)
    return _finish_training(result, Path(args.out), verbose)


def cmd_advtrain(args: argparse.Namespace, config: Config) -> list[Path]:
    """Adversarially train a char classifier."""
    verbose = not args.quiet
    args.arch = "char"
    train_set, dev_set = _training_data(args, config, "char")
    model = _build_model(args, config, train_set, dev_set)
    adv_config = AdvTrainConfig(
        method=args.method,
        flip_fraction=args.r_frac,
        noise_scale=args.noise_scale,
        mixing=args.mixing,
        vocab_constraint=args.train_vocab_constraint,
        keystar_queries=args.queries,
    )
    train_config = _train_config(args)
    require_valid(train_config, adv_config)
    vocab = build_word_vocab(train_set, config.lowercase) if adv_config.vocab_constraint else None
    if verbose:
        print(f"Adversarial training ({args.method}) on {len(train_set)} examples ({len(dev_set)} dev)")
        print("=" * 40)
    result = adversarial_train(
        model,
        _encode_for(model, train_set),
        _encode_for(model, dev_set),
        train_config,
        adv_config,
        vocab,
        verbose=verbose,
    )
    return _finish_training(result, Path(args.out), verbose)


def cmd_attack(args: argparse.Namespace, config: Config) -> list[Path]:
    """Attack a char model on a dataset; writes one CSV row per example."""
    verbose = not args.quiet
    attack_config = _attack_config(args)
    require_valid(attack_config)
    model = _char_model(config.resolve_data(args.model))
    vocab = _attack_vocab(args, config)
    examples = _encode_for(model, _load(config.resolve_data(args.data), args.format or "agnews", config.lowercase, args.limit))
    outcomes, summary = attack_dataset(model, examples, vocab, attack_config, args.method, args.jobs, verbose)

    out = Path(args.out)
    write_attack_report(out, outcomes)
    summary_path = out.with_name(out.name + ".summary.json")
    stats = edit_statistics(outcomes)
    payload = {"summary": summary.model_dump(), "edit_statistics": stats.model_dump()}
    summary_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    if verbose:
        print(f"\n{args.method} attack: {summary.successes}/{summary.eligible} eligible examples flipped")
        if summary.no_eligible:
            print("No eligible examples: every example was misclassified before the attack")
        else:
            print(f"Success rate: {summary.success_rate:.4f}")
        if summary.mean_char_change is not None:
            print(f"Mean characters changed: {summary.mean_char_change:.2%}")
        if not stats.empty:
            print(f"Edit kinds: flip {stats.flip:.2f}, insert {stats.insert:.2f}, delete {stats.delete:.2f}")
        print(f"Report: {out}")
    return [out, summary_path]


def _parse_models(specs: Sequence[str]) -> list[tuple[str, Path]]:
    models = []
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep or not name or not path:
            raise ConfigError([f"--model expects NAME=PATH, got {spec!r}"])
        models.append((name, Path(path)))
    return models


def cmd_report(args: argparse.Namespace, config: Config) -> list[Path]:
    """Clean error and flip-only attack success per model."""
    verbose = not args.quiet
    attack_config = _attack_config(args)
    require_valid(attack_config)
    models = [(name, _char_model(config.resolve_data(path))) for name, path in _parse_models(args.model)]
    vocab = _attack_vocab(args, config)
    raw = _load(config.resolve_data(args.data), args.format or "agnews", config.lowercase, args.limit)
    examples = _encode_for(models[0][1], raw)
    rows = robustness_report(models, examples, attack_config, vocab, not args.full_ops, args.jobs, verbose)
    out = write_robustness_report(args.out, rows)
    if verbose:
        print()
        for row in rows:
            rate = "n/a" if row.attack_success_rate is None else f"{row.attack_success_rate:.4f}"
            print(f"{row.model}: clean error {row.clean_error:.4f}, attack success {rate}")
        print(f"Report: {out}")
    return [out]


def cmd_curve(args: argparse.Namespace, config: Config) -> list[Path]:
    """Success rate against the confidence threshold."""
    verbose = not args.quiet
    attack_config = _attack_config(args)
    try:
        taus = [float(t) for t in args.taus.split(",") if t.strip()]
    except ValueError:
        raise ConfigError([f"--taus must be comma-separated numbers, got {args.taus!r}"]) from None
    model = _char_model(config.resolve_data(args.model))
    vocab = _attack_vocab(args, config)
    examples = _encode_for(model, _load(config.resolve_data(args.data), args.format or "agnews", config.lowercase, args.limit))
    curve = success_vs_confidence(
        model, examples, vocab, attack_config, taus, args.method, args.mode, args.jobs, verbose
    )
    out = write_curve(args.out, curve)
    if verbose:
        print()
        for point in curve.points:
            rate = "n/a" if point.success_rate is None else f"{point.success_rate:.4f}"
            print(f"tau {point.tau:.2f}: success {rate} over {point.eligible} eligible")
        if curve.violations:
            print(f"Success rate increased at: {', '.join(str(t) for t in curve.violations)}")
        print(f"Curve: {out}")
    return [out]


def cmd_wordattack(args: argparse.Namespace, config: Config) -> list[Path]:
    """Constrained word substitutions against a word model."""
    verbose = not args.quiet
    constraints = WordConstraintConfig(
        cosine_threshold=args.threshold,
        lexicon_path=config.resolve_data(args.lexicon) if args.lexicon else None,
        stopwords_path=config.resolve_data(args.stopwords) if args.stopwords else None,
        protect_target_stopwords=not args.allow_target_stopwords,
        use_model_embeddings=args.model_embeddings,
        beam_width=args.beam,
        max_flips=args.max_flips,
    )
    require_valid(constraints)
    model = load_checkpoint(config.resolve_data(args.model))
    if not isinstance(model, WordClassifier):
        raise ConfigError([f"{args.model} holds a char model; wordattack needs a word model"])
    if not args.embeddings and not args.model_embeddings:
        raise ConfigError(["--embeddings is required unless --model-embeddings is given"])
    if args.embeddings:
        table = load_embeddings(config.resolve_data(args.embeddings))
    else:
        table = EmbeddingTable.from_model(model.vocab.words, model.embedding_table())
    resources = LexicalResources.from_config(constraints, table)
    examples = _encode_for(model, _load(config.resolve_data(args.data), args.format or "sst", config.lowercase, args.limit))
    outcomes, summary = word_attack_dataset(model, examples, resources, constraints, args.jobs, verbose)
    out = write_word_report(args.out, outcomes)
    if verbose:
        print(f"\nWord attack: {summary.successes}/{summary.eligible} eligible sentences flipped")
        print(f"Report: {out}")
    return [out]


def cmd_neighbors(args: argparse.Namespace, config: Config) -> list[Path]:
    """Nearest vocabulary words of each query at the highway layer."""
    verbose = not args.quiet
    checkpoint = config.resolve_data(args.model)
    model = _char_model(checkpoint)
    vocab_examples = _load(config.resolve_data(args.vocab_data), args.format or "agnews", config.lowercase, None)
    words = sorted(
        word
        for word in build_word_vocab(vocab_examples, config.lowercase).words
        if all(ch in model.alphabet for ch in word)
    )
    index = vocabulary_representations(model, words, checkpoint, verbose=verbose)
    queries = [q.strip() for q in args.words.split(",") if q.strip()]
    reports = [nearest_neighbors(model, query, args.k, index) for query in queries]
    out = write_neighbors(args.out, reports)
    if verbose:
        for report in reports:
            listed = ", ".join(f"{n.word} ({n.cosine:.3f})" for n in report.neighbors)
            marker = "" if report.in_vocab else " [not in vocabulary]"
            print(f"{report.query}{marker}: {listed}")
        print(f"Neighbors: {out}")
    return [out]


COMMANDS: dict[str, Callable[[argparse.Namespace, Config], list[Path]]] = {
    "train": cmd_train,
    "advtrain": cmd_advtrain,
    "attack": cmd_attack,
    "report": cmd_report,
    "curve": cmd_curve,
    "wordattack": cmd_wordattack,
    "neighbors": cmd_neighbors,
}

DEFAULT_OUTPUTS = {
    "train": "model.bin",
    "advtrain": "model-adv.bin",
    "attack": "attack.csv",
    "report": "robustness.csv",
    "curve": "curve.csv",
    "wordattack": "wordattack.csv",
    "neighbors": "neighbors.csv",
}


# --- parser ---------------------------------------------------------------------


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", help="Output path (default: under HOTFLIP_OUTPUT_DIR)")
    parser.add_argument("--seed", type=int, help="Run seed (default: HOTFLIP_SEED)")
    parser.add_argument("--format", choices=["agnews", "sst"], help="Dataset format")
    parser.add_argument("--limit", type=int, help="Use only the first N examples")
    parser.add_argument("--jobs", type=int, help="Parallel attack workers (default: HOTFLIP_JOBS)")
    parser.add_argument("--quiet", "-q", action="store_true", help="Suppress progress output")


def _training_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", required=True, help="Training data file")
    parser.add_argument("--dev", help="Separate dev file (default: split off the training data)")
    parser.add_argument("--dev-fraction", type=float, default=0.1)
    parser.add_argument("--epochs", type=int, default=TrainConfig.max_epochs)
    parser.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    parser.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    parser.add_argument("--clip", type=float, default=TrainConfig.clip_threshold)
    parser.add_argument("--patience", type=int, default=TrainConfig.patience)


def _attack_flags(parser: argparse.ArgumentParser, several_models: bool = False) -> None:
    if several_models:
        parser.add_argument("--model", required=True, nargs="+", help="NAME=PATH checkpoints sharing one alphabet")
    else:
        parser.add_argument("--model", required=True, help="Checkpoint path")
    parser.add_argument("--data", required=True, help="Examples to attack")
    parser.add_argument("--beam", type=int, default=AttackConfig.beam_width)
    parser.add_argument("--budget", type=float, default=AttackConfig.budget, help="Max fraction of characters edited")
    parser.add_argument("--ops", default=",".join(EDIT_KINDS), help="Comma-separated edit kinds")
    parser.add_argument("--tau", type=float, default=AttackConfig.tau, help="Wrong-class confidence for success")
    parser.add_argument("--queries", type=int, default=AttackConfig.keystar_queries, help="Random flips per key* step")
    parser.add_argument("--max-steps", type=int, help="Hard cap on attack steps")
    parser.add_argument("--vocab-data", help="Training data whose words may not be produced")
    parser.add_argument("--no-vocab-constraint", action="store_true", help="Allow edits that produce known words")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hotflip",
        description="White-box adversarial edits against character and word classifiers",
    )
    parser.add_argument("--env", help="Path to a .env file")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train", help="Train a classifier")
    _common(p)
    _training_flags(p)
    p.add_argument("--arch", choices=["char", "word"], default="char")
    p.add_argument("--embeddings", help="Pretrained word vectors for the word model")

    p = sub.add_parser("advtrain", help="Adversarially train a char classifier")
    _common(p)
    _training_flags(p)
    p.add_argument("--method", choices=ADV_METHODS, default=AdvTrainConfig.method)
    p.add_argument("--r-frac", type=float, default=AdvTrainConfig.flip_fraction, help="Flip budget per example")
    p.add_argument("--noise-scale", type=float, default=AdvTrainConfig.noise_scale)
    p.add_argument("--mixing", choices=["concat", "alternate"], default=AdvTrainConfig.mixing)
    p.add_argument("--queries", type=int, default=AdvTrainConfig.keystar_queries)
    p.add_argument("--train-vocab-constraint", action="store_true", help="Keep flips off known words")

    p = sub.add_parser("attack", help="Attack a char model on a dataset")
    _common(p)
    _attack_flags(p)
    p.add_argument("--method", choices=METHODS, default="beam")

    p = sub.add_parser("report", help="Clean error and attack success per model")
    _common(p)
    _attack_flags(p, several_models=True)
    p.add_argument("--full-ops", action="store_true", help="Attack with every edit kind, not flips only")

    p = sub.add_parser("curve", help="Success rate against the confidence threshold")
    _common(p)
    _attack_flags(p)
    p.add_argument("--method", choices=METHODS, default="beam")
    p.add_argument("--taus", default=",".join(str(t) for t in DEFAULT_TAUS))
    p.add_argument("--mode", choices=CURVE_MODES, default="reattack")

    p = sub.add_parser("wordattack", help="Constrained word substitutions against a word model")
    _common(p)
    p.add_argument("--model", required=True, help="Word model checkpoint")
    p.add_argument("--data", required=True, help="Sentences to attack")
    p.add_argument("--embeddings", help="Word vectors for the cosine constraint")
    p.add_argument("--model-embeddings", action="store_true", help="Use the model's own embeddings for cosine")
    p.add_argument("--lexicon", help="word<TAB>tag part-of-speech lexicon")
    p.add_argument("--stopwords", help="Stop-word list (default: bundled English list)")
    p.add_argument("--threshold", type=float, default=WordConstraintConfig.cosine_threshold)
    p.add_argument("--allow-target-stopwords", action="store_true")
    p.add_argument("--beam", type=int, default=WordConstraintConfig.beam_width)
    p.add_argument("--max-flips", type=int, default=WordConstraintConfig.max_flips)

    p = sub.add_parser("neighbors", help="Nearest vocabulary words at the highway layer")
    _common(p)
    p.add_argument("--model", required=True, help="Char model checkpoint")
    p.add_argument("--vocab-data", required=True, help="Data whose words form the search vocabulary")
    p.add_argument("--words", required=True, help="Comma-separated query words")
    p.add_argument("--k", type=int, default=4)

    p = sub.add_parser("replay", help="Re-run a saved run configuration")
    p.add_argument("runconfig", help="Path to a .runconfig.json file")
    p.add_argument("--quiet", "-q", action="store_true")
    return parser


# --- run ------------------------------------------------------------------------


def _resolve_defaults(args: argparse.Namespace, config: Config) -> None:
    if args.seed is None:
        args.seed = config.seed
    if args.jobs is None:
        args.jobs = config.jobs
    if args.out is None:
        args.out = str(config.output_dir / DEFAULT_OUTPUTS[args.subcommand])


def _write_runconfig(args: argparse.Namespace, config: Config) -> Path:
    recorded = {key: value for key, value in vars(args).items() if key not in ("subcommand", "env")}
    run = RunConfig(
        subcommand=args.subcommand,
        seed=args.seed,
        output=args.out,
        args=recorded,
        environment=config.to_dict(),
    )
    path = Path(args.out)
    path = path.with_name(path.name + ".runconfig.json")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(run.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return path


def load_runconfig(path: str | Path) -> tuple[argparse.Namespace, Config | None]:
    """Saved arguments plus the environment settings of the original run, if recorded."""
    try:
        run = RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except ValueError as e:
        raise ConfigError([f"{path} is not a run configuration: {e}"]) from None
    if run.subcommand not in COMMANDS:
        raise ConfigError([f"unknown subcommand {run.subcommand!r} in {path}"])
    args = argparse.Namespace(subcommand=run.subcommand, env=None, **run.args)
    config = Config.from_dict(run.environment) if run.environment else None
    return args, config


def run(args: argparse.Namespace, config: Config) -> list[Path]:
    """Execute one parsed subcommand and record how to repeat it."""
    if args.subcommand == "replay":
        quiet = args.quiet
        args, recorded = load_runconfig(args.runconfig)
        args.quiet = quiet or args.quiet
        if recorded is not None:
            require_valid(recorded)
            config = recorded
        logger.info("Replaying %s run into %s", args.subcommand, args.out)
    _resolve_defaults(args, config)
    if args.jobs < 1:
        raise ConfigError(["--jobs must be at least 1"])
    outputs = COMMANDS[args.subcommand](args, config)
    outputs.append(_write_runconfig(args, config))
    return outputs


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        config = Config.from_env(args.env)
    except ConfigError as e:
        errors = e.problems
    else:
        errors = config.validate()
    if errors:
        print("Configuration errors:", file=sys.stderr)
        for error in errors:
            print(f"  - {error}", file=sys.stderr)
        return EXIT_INPUT

    try:
        run(args, config)
    except INPUT_ERRORS as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except HotflipError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as e:
        logger.debug("unexpected failure", exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
