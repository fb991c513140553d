"""
Command line front-end for the relation extraction pipeline.

    stats        corpus statistics
    preprocess   corpus files -> tagged examples TSV
    build-vocab  examples TSV -> vocabulary file
    train        examples + vocabulary -> checkpoint
    predict      checkpoint + examples (or raw corpus) -> relations TSV
    evaluate     predicted + gold relations -> per-class report

Every setting can come from a key=value file (--config) and be overridden by
its own flag, e.g. --learning-rate 1e-4 or --cnn-window-sizes 3,4,5.
"""
import argparse
import dataclasses
import logging
import sys
from typing import Callable, Dict, List, Optional

from config import LOG_LEVEL, RunConfig, build_run_config, known_keys, load_config_file
from corpus.models import CORPUS_LABELS, EVALUATED_LABELS, RelationLabel, label_table
from corpus.parser import read_relations
from corpus.service import corpus_stats, load_corpus, merge_corpora
from errors import ConfigError, ExtractorError
from evaluate import confusion, micro_metrics, predict, report, write_predictions
from graph import run_preprocess
from preprocess import RelationExample, load_examples, write_examples
from tokenizer import Vocabulary, build_vocab, encode_all
from train import Checkpoint, load_checkpoint, save_checkpoint, train

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(asctime)s] %(levelname)s: %(message)s"


def configure_logging(level: str) -> None:
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, stream=sys.stderr, force=True)


def _require(value, flag: str):
    if not value:
        raise ConfigError(f"missing required setting --{flag}")
    return value


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        _write_text(path, text)
    else:
        sys.stdout.write(text)


def cmd_stats(cfg: RunConfig) -> int:
    _require(cfg.abstracts, "abstracts")
    if len(cfg.abstracts) != len(cfg.entities):
        raise ConfigError("each abstracts file needs a matching entities file")
    if cfg.relations and len(cfg.relations) != len(cfg.abstracts):
        raise ConfigError("give one relations file per abstracts file, or none")
    corpora = [
        load_corpus(a, e, cfg.relations[i] if cfg.relations else None)
        for i, (a, e) in enumerate(zip(cfg.abstracts, cfg.entities))
    ]
    stats = corpus_stats(merge_corpora(*corpora))
    print("\n".join(stats.lines()))
    return 0


def cmd_preprocess(cfg: RunConfig) -> int:
    out = _require(cfg.output or cfg.examples, "output")
    examples, stats = run_preprocess(
        cfg.abstracts, cfg.entities, cfg.relations, cfg.splitter, cfg.drop_rare_labels
    )
    _write_text(out, write_examples(examples))
    print("\n".join(stats.lines()))
    return 0


def cmd_build_vocab(cfg: RunConfig) -> int:
    examples = load_examples(_require(cfg.examples, "examples"))
    vocab = build_vocab(examples, cfg.min_frequency)
    vocab.save(_require(cfg.vocab or cfg.output, "vocab"))
    print(f"vocabulary: {len(vocab)} tokens")
    return 0


def _max_len(cfg: RunConfig, max_positions: int) -> int:
    if cfg.max_seq_length > max_positions:
        raise ConfigError(f"max_seq_length {cfg.max_seq_length} exceeds max_positions {max_positions}")
    return cfg.max_seq_length


def _predict_len(cfg: RunConfig, ckpt: Checkpoint) -> int:
    """An explicit --max-seq-length wins; otherwise the length the checkpoint was trained with"""
    if "max_seq_length" in cfg.model_fields_set:
        return _max_len(cfg, ckpt.model_cfg.max_positions)
    if ckpt.max_seq_length is not None:
        return ckpt.max_seq_length
    return min(cfg.max_seq_length, ckpt.model_cfg.max_positions)


def cmd_train(cfg: RunConfig) -> int:
    examples = load_examples(_require(cfg.examples, "examples"))
    vocab = Vocabulary.load(_require(cfg.vocab, "vocab"))
    out = _require(cfg.checkpoint or cfg.output, "checkpoint")
    labels = label_table(cfg.drop_rare_labels)
    max_len = _max_len(cfg, cfg.model.max_positions)
    encoded, _ = encode_all(examples, vocab, max_len, labels)
    ckpt = train(encoded, cfg.model, cfg.train, vocab, labels, log_path=cfg.log)
    ckpt.max_seq_length = max_len
    save_checkpoint(ckpt, out)
    return 0


def _unlabeled(examples: List[RelationExample], labels: List[RelationLabel]) -> List[RelationExample]:
    """Labels unknown to the checkpoint do not matter for prediction"""
    return [
        ex if ex.label in labels else dataclasses.replace(ex, label=RelationLabel.OTHER)
        for ex in examples
    ]


def cmd_predict(cfg: RunConfig) -> int:
    ckpt = load_checkpoint(_require(cfg.checkpoint, "checkpoint"))
    if cfg.examples:
        examples = load_examples(cfg.examples)
    else:
        _require(cfg.abstracts, "abstracts")
        examples, _ = run_preprocess(cfg.abstracts, cfg.entities, (), cfg.splitter, cfg.drop_rare_labels)
    encoded, _ = encode_all(
        _unlabeled(examples, ckpt.labels), ckpt.vocab, _predict_len(cfg, ckpt), ckpt.labels
    )
    _emit(write_predictions(predict(ckpt, encoded)), cfg.predictions or cfg.output)
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    pred = read_relations(_require(cfg.predictions, "predictions"))
    gold = read_relations(_require(cfg.gold, "gold"))
    labels = EVALUATED_LABELS if cfg.drop_rare_labels else CORPUS_LABELS
    text = report(micro_metrics(confusion(pred, gold, labels)))
    sys.stdout.write(text)
    if cfg.report_out:
        _write_text(cfg.report_out, text)
    return 0


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "stats": cmd_stats,
    "preprocess": cmd_preprocess,
    "build-vocab": cmd_build_vocab,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value settings file")
    common.add_argument("--log-level", help=f"logging level (default {LOG_LEVEL})")
    settings = common.add_argument_group("settings")
    for key in known_keys():
        kwargs = {"dest": key, "default": argparse.SUPPRESS}
        if key == "head":
            kwargs["choices"] = ["model1", "rbert-cnn"]
        settings.add_argument("--" + key.replace("_", "-"), **kwargs)
    settings.add_argument("--cls-path", choices=["on", "off"], default=argparse.SUPPRESS,
                          help="include the <s> vector in the CNN head")

    parser = argparse.ArgumentParser(prog="extractor", description="Chemical-protein relation extraction")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=command.__name__.replace("cmd_", ""))
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the --config file, then individual flags"""
    values = load_config_file(args.config) if args.config else {}
    for key in known_keys():
        if hasattr(args, key):
            values[key] = getattr(args, key)
    if hasattr(args, "cls_path"):
        values["include_cls_path"] = args.cls_path == "on"
    return build_run_config(values)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = (args.log_level or LOG_LEVEL).upper()
    if not isinstance(logging.getLevelName(level), int):
        print(f"error: unknown log level {level}", file=sys.stderr)
        return 2
    configure_logging(level)
    try:
        return COMMANDS[args.command](resolve_config(args))
    except (ExtractorError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
