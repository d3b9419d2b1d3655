"""Command-line interface: ``metrictype <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .dataset_io import CorpusError, SynthSpec, corpus_stats, generate_synthetic, load_corpus, save_corpus
from .table_model import ValidationError
from .training import (ABLATION_FLAGS, ConfigError, TrainingError, ablate, evaluate, load_checkpoint,
                       load_config, predict_all, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4


def _tables(path) -> list:
    return load_corpus(path).tables


def _emit(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, ensure_ascii=False)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_stats(args) -> int:
    _emit(corpus_stats(_tables(args.corpus)).to_dict(), args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    result = load_corpus(args.corpus)
    _emit({"valid": len(result.tables), "rejected": result.rejected}, None)
    return EXIT_OK if not result.rejected else EXIT_DATA


def cmd_synth(args) -> int:
    spec = SynthSpec()
    if args.proportions:
        spec.proportions = tuple(float(x) for x in args.proportions.split(","))
    if args.lexicon:
        spec.metric_lexicon = tuple(args.lexicon.split(","))
    save_corpus(generate_synthetic(args.seed, args.size, spec), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config, model=args.model, seed=args.seed, max_epochs=args.max_epochs)
    result = train(config, _tables(args.train), _tables(args.val), args.out)
    print(json.dumps({"checkpoint": str(result.checkpoint), "best_epoch": result.best_epoch,
                      "best_metric": result.best_metric}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, config = load_checkpoint(args.checkpoint)
    report = evaluate(model, _tables(args.test), config)
    report.write_json(args.report)
    report.write_confusion_csv(args.confusion or Path(args.report).with_suffix(".csv"))
    print(json.dumps(report.percentages()))
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    tables = _tables(getattr(args, "in"))
    preds = predict_all(model, tables)
    _emit([p.to_dict(t.id) for t, p in zip(tables, preds)], args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_config(args.config, model=args.model, seed=args.seed, max_epochs=args.max_epochs)
    report = ablate(config, args.flag, _tables(args.train), _tables(args.val), _tables(args.test), args.out)
    report.write_json(args.report)
    report.write_confusion_csv(Path(args.report).with_suffix(".csv"))
    print(json.dumps({"flag": args.flag, **report.percentages()}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metrictype", description="Metric-type identification for header tables")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", help="corpus statistics as JSON")
    s.add_argument("corpus")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("validate", help="report records that violate table invariants")
    s.add_argument("corpus")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("synth", help="write a synthetic corpus")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--proportions", help="ch,rh,capt shares, e.g. 0.6,0.2,0.2")
    s.add_argument("--lexicon", help="comma separated metric-type words")
    s.set_defaults(func=cmd_synth)

    def training_args(s):
        s.add_argument("--config")
        s.add_argument("--model", choices=["pg", "segenc", "svm"])
        s.add_argument("--seed", type=int)
        s.add_argument("--max-epochs", type=int)
        s.add_argument("--train", required=True)
        s.add_argument("--val", required=True)
        s.add_argument("--out", required=True, help="checkpoint directory")

    s = sub.add_parser("train", help="train a model and keep the best validation checkpoint")
    training_args(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="score a checkpoint on a corpus")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--confusion", help="CSV path (default: report path with .csv)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", help="per-table predictions as JSON")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--in", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("ablate", help="train an ablated variant and evaluate it")
    s.add_argument("--flag", required=True, choices=sorted(ABLATION_FLAGS))
    training_args(s)
    s.add_argument("--test", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, ValidationError, FileNotFoundError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as e:
        print(f"training failed: {e}", file=sys.stderr)
        return EXIT_TRAIN


if __name__ == "__main__":
    sys.exit(main())
