"""Command-line front end wiring the pipeline.

Subcommands: extract, prep-captions, make-splits, train, caption, evaluate,
baseline.  Reports are JSON, tables are CSV, captions are line-aligned
text.  Every subcommand is deterministic given its inputs and --seed.
Config precedence: flags > JSON config file > defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import audio_features, checkpoint, data_prep, metrics, model, training

_CONFIG_DEFAULTS: dict = {
    "features_dir": "features",
    "n_feats": 64,
    "encoder_hidden": [64, 64, 128],
    "decoder_hidden": [128, 256],
    "caption_steps": 11,
    "seq_len": 1289,
    "batch_size": 64,
    "input_dropout": 0.5,
    "recurrent_dropout": 0.25,
    "max_epochs": 100,
    "patience": 10,
    "min_count": 5,
    "baseline_count": 100,
}


def load_run_config(config_path, overrides: dict) -> dict:
    """Defaults, overlaid by the JSON config file, overlaid by set flags."""
    config = dict(_CONFIG_DEFAULTS)
    if config_path:
        with open(config_path, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(config)
        if unknown:
            raise ValueError(f"{config_path}: unknown config keys {sorted(unknown)}")
        config.update(loaded)
    config.update({k: v for k, v in overrides.items() if v is not None})
    return config


def _model_config(config: dict, vocab_size: int) -> model.ModelConfig:
    return model.ModelConfig(
        n_feats=config["n_feats"],
        encoder_hidden=tuple(config["encoder_hidden"]),
        decoder_hidden=tuple(config["decoder_hidden"]),
        vocab_size=vocab_size,
        caption_steps=config["caption_steps"],
        seq_len=config["seq_len"],
    )


def _load_features_checked(path, config: dict) -> np.ndarray:
    features = audio_features.load_features(path)
    expected = (config["seq_len"], config["n_feats"])
    if features.shape != expected:
        raise ValueError(f"{path}: feature shape {features.shape}, config expects {expected}")
    return features


def cmd_extract(args) -> int:
    rows = data_prep.read_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for row in rows:
        signal = audio_features.load_audio(row.audio_path)
        features = audio_features.extract_features(signal)
        audio_features.save_features(out_dir / f"{row.record_id}.acf", features)
    print(f"extracted {len(rows)} feature files into {out_dir}")
    return 0


def cmd_prep_captions(args) -> int:
    rows = data_prep.read_manifest(args.manifest)
    dictionary = data_prep.load_word_list(args.dictionary)
    kept: list[data_prep.ManifestRow] = []
    dropped = 0
    for row in rows:
        tokens = data_prep.normalize_caption(row.caption, dictionary)
        if tokens:
            kept.append(data_prep.ManifestRow(row.record_id, row.audio_path, " ".join(tokens)))
        else:
            dropped += 1
    data_prep.write_manifest(kept, args.out)
    print(f"kept {len(kept)} records, dropped {dropped} with empty cleaned captions")
    return 0


def cmd_make_splits(args) -> int:
    config = load_run_config(args.config, {})
    rows = data_prep.read_manifest(args.manifest)
    records = {row.record_id: row.caption.split() for row in rows}
    splits = data_prep.generate_split_candidates(
        records, n_candidates=args.candidates_count, seed=args.seed,
        min_count=config["min_count"],
    )
    splits.save(args.out)
    print(f"splits: {len(splits.train)} train / {len(splits.val)} val / "
          f"{len(splits.test)} test -> {args.out}")
    if args.vocab:
        vocab = data_prep.build_vocabulary(records, splits, min_count=config["min_count"])
        vocab.save(args.vocab)
        print(f"vocabulary: {len(vocab)} words (incl. {data_prep.EOS_TOKEN}) -> {args.vocab}")
    return 0


def cmd_train(args) -> int:
    config = load_run_config(args.config, {"max_epochs": args.epochs, "patience": args.patience})
    rows = {row.record_id: row for row in data_prep.read_manifest(args.manifest)}
    vocab = data_prep.Vocabulary.load(args.vocab)
    splits = data_prep.SplitSet.load(args.splits)
    features_dir = Path(config["features_dir"])

    def build(ids):
        examples = []
        skipped = 0
        for record_id in ids:
            row = rows.get(record_id)
            if row is None:
                raise ValueError(f"split id {record_id!r} missing from the manifest")
            try:
                targets = data_prep.encode_caption(
                    row.caption.split(), vocab, max_words=config["caption_steps"] - 1
                )
            except data_prep.EmptyCaptionError:
                skipped += 1
                continue
            features = _load_features_checked(features_dir / f"{record_id}.acf", config)
            examples.append(training.TrainingExample(features=features, targets=targets))
        return examples, skipped

    train_examples, skipped_train = build(splits.train)
    val_examples, skipped_val = build(splits.val)
    if skipped_train or skipped_val:
        print(f"skipped {skipped_train + skipped_val} records with no in-vocabulary words")

    model_config = _model_config(config, vocab_size=len(vocab))
    train_config = training.TrainConfig(
        batch_size=config["batch_size"],
        input_dropout=config["input_dropout"],
        recurrent_dropout=config["recurrent_dropout"],
        max_epochs=config["max_epochs"],
        patience=config["patience"],
        seed=args.seed,
    )
    result = training.train(train_examples, val_examples, train_config, model_config)
    checkpoint.save_checkpoint(result.params, args.checkpoint)
    history_path = args.out if args.out else f"{args.checkpoint}.history.csv"
    training.write_history_csv(result.history, history_path)
    print(f"trained {len(result.history)} epochs; best validation loss "
          f"{result.best_val_loss:.6f} at epoch {result.best_epoch}; "
          f"checkpoint -> {args.checkpoint}, history -> {history_path}")
    return 0


def cmd_caption(args) -> int:
    config = load_run_config(args.config, {})
    rows = data_prep.read_manifest(args.manifest)
    params = checkpoint.load_checkpoint(args.checkpoint)
    vocab = data_prep.Vocabulary.load(args.vocab)
    if len(vocab) != params.config.vocab_size:
        raise ValueError(
            f"vocabulary size {len(vocab)} does not match checkpoint "
            f"vocab_size {params.config.vocab_size}"
        )
    features_dir = Path(config["features_dir"])
    lines = []
    for row in rows:
        features = audio_features.load_features(features_dir / f"{row.record_id}.acf")
        words = model.predict_caption(features, params, vocab)
        lines.append(" ".join(words))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} captions to {args.out}")
    return 0


def _read_token_lines(path) -> list[list[str]]:
    text = Path(path).read_text(encoding="utf-8")
    return [line.split() for line in text.splitlines()]


def cmd_evaluate(args) -> int:
    references = _read_token_lines(args.references)
    runs = []
    first_pairs = None
    for candidate_path in args.candidates:
        candidates = _read_token_lines(candidate_path)
        pairs = metrics.make_pairs(candidates, references)
        if first_pairs is None:
            first_pairs = pairs
        runs.append(metrics.evaluate_corpus(pairs))
    report = metrics.MetricReport.from_runs(
        runs, notes={"seed": args.seed, "candidate_files": [str(c) for c in args.candidates]}
    )
    payload = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    print(payload)
    if args.out:
        Path(args.out).write_text(payload + "\n", encoding="utf-8")
        pairs_csv = Path(f"{args.out}.pairs.csv")
        with open(pairs_csv, "w", encoding="utf-8") as fh:
            names = list(metrics.METRIC_NAMES)
            fh.write(",".join(["pair"] + names) + "\n")
            for i, scores in enumerate(metrics.per_pair_scores(first_pairs)):
                fh.write(",".join([str(i)] + [repr(scores[n]) for n in names]) + "\n")
    return 0


def cmd_baseline(args) -> int:
    config = load_run_config(args.config, {})
    rng = np.random.default_rng(args.seed)
    if args.mode == "random-words":
        if not args.vocab:
            raise ValueError("baseline --mode random-words needs --vocab")
        vocab = data_prep.Vocabulary.load(args.vocab)
        count = config["baseline_count"]
        if args.manifest:
            count = len(data_prep.read_manifest(args.manifest))
        lines = [" ".join(data_prep.random_caption_baseline(vocab, rng)) for _ in range(count)]
        Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"wrote {count} random-word captions to {args.out}")
        return 0

    # random-input: Gaussian feature files for every test record, fit on train
    if not (args.manifest and args.splits):
        raise ValueError("baseline --mode random-input needs --manifest and --splits")
    splits = data_prep.SplitSet.load(args.splits)
    features_dir = Path(config["features_dir"])
    train_features = [
        _load_features_checked(features_dir / f"{record_id}.acf", config)
        for record_id in splits.train
    ]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for record_id in splits.test:
        sample = data_prep.random_input_baseline(train_features, rng)
        audio_features.save_features(out_dir / f"{record_id}.acf", sample)
    print(f"wrote {len(splits.test)} random-input feature files into {out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audiocap",
        description="Audio captioning pipeline: features, splits, training, "
                    "captioning, metrics, baselines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="write one ACF1 feature file per manifest row")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("prep-captions", help="clean captions against a dictionary word list")
    p.add_argument("--manifest", required=True)
    p.add_argument("--dictionary", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prep_captions)

    p = sub.add_parser("make-splits", help="pick the best of N random caption-disjoint splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", help="also write the vocabulary of the chosen split here")
    p.add_argument("--candidates-count", type=int, default=1000)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_splits)

    p = sub.add_parser("train", help="train on the train split, early-stop on validation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--config")
    p.add_argument("--epochs", type=int, help="override max epochs")
    p.add_argument("--patience", type=int, help="override early-stopping patience")
    p.add_argument("--out", help="loss history CSV (default: <checkpoint>.history.csv)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("caption", help="greedy captions for every manifest row")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("evaluate", help="score candidate caption file(s) against references")
    p.add_argument("--candidates", required=True, nargs="+",
                   help="one or more candidate files; several files = several runs")
    p.add_argument("--references", required=True)
    p.add_argument("--out", help="report JSON path (per-pair CSV lands next to it)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="random-word captions or random-input features")
    p.add_argument("--mode", required=True, choices=["random-words", "random-input"])
    p.add_argument("--vocab")
    p.add_argument("--manifest")
    p.add_argument("--splits")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_baseline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError, ArithmeticError,
            checkpoint.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
