"""Command-line interface: training, prediction, ensembling, evaluation,
and experiment presets.

Every subcommand exits nonzero with a one-line message on bad input and
writes its artifacts under ``--out-dir``; a run directory without a
manifest is an aborted run, never a silently partial one.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .corpus import build_vocab, load_parallel, load_qe_dataset, load_vocab, save_vocab
from .ensemble import load_feature_csv, load_meta_model, save_meta_model, stack_fit, meta_predict
from .estimator import (
    load_estimator,
    load_predictions,
    predict_batch,
    save_estimator,
    train_estimator,
    write_predictions,
)
from .evaluation import ScoredPrediction, pearson, report
from .experiments import (
    ExperimentConfig,
    PRESETS,
    _rng,
    config_hash,
    ensure_benchmark,
    load_experiment_config,
    pooled_label,
    run_experiment_preset,
)
from .predictor import CheckpointError, load_predictor, save_predictor, train_predictor


def _base_config(args) -> ExperimentConfig:
    config = load_experiment_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out_dir is not None:
        overrides["out_dir"] = args.out_dir
    if overrides:
        config = dataclasses.replace(config, **overrides)
    return config.validate()


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_train_predictor(args) -> int:
    config = _base_config(args)
    pcfg = config.predictor
    for name in ("arch", "loss", "epochs"):
        if getattr(args, name) is not None:
            pcfg = dataclasses.replace(pcfg, **{name: getattr(args, name)})
    train_pairs = load_parallel(args.train)
    valid_pairs = load_parallel(args.valid) if args.valid else train_pairs
    src_vocab = build_vocab([p.source_tokens for p in train_pairs])
    tgt_vocab = build_vocab([p.target_tokens for p in train_pairs])
    best, logs = train_predictor(pcfg, train_pairs, valid_pairs, src_vocab, tgt_vocab,
                                 _rng(config.seed, "cli", "train-predictor"))
    out = _out_dir(config)
    save_predictor(out / "predictor.ckpt", best)
    save_vocab(src_vocab, out / "src.vocab")
    save_vocab(tgt_vocab, out / "tgt.vocab")
    last = logs[-1]
    print(f"trained {pcfg.arch}/{pcfg.loss} predictor for {len(logs)} epochs; "
          f"best valid accuracy {max(l.valid_accuracy for l in logs):.4f} "
          f"(final train loss {last.train_loss:.4f})")
    print(f"wrote {out / 'predictor.ckpt'}")
    return 0


def _cmd_train_estimator(args) -> int:
    config = _base_config(args)
    qe_train = load_qe_dataset(args.qe_train, args.pair)
    qe_valid = load_qe_dataset(args.qe_valid, args.pair) if args.qe_valid else qe_train
    predictor = load_predictor(args.predictor)
    src_vocab = load_vocab(args.src_vocab)
    tgt_vocab = load_vocab(args.tgt_vocab)
    best, logs = train_estimator(config.estimator, qe_train, qe_valid, predictor,
                                 src_vocab, tgt_vocab,
                                 _rng(config.seed, "cli", "train-estimator"))
    out = _out_dir(config)
    save_estimator(out / "estimator.ckpt", best)
    best_mse = min(l.valid_mse for l in logs)
    print(f"trained estimator for {len(logs)} epochs; best valid MSE {best_mse:.4f}")
    print(f"wrote {out / 'estimator.ckpt'}")
    return 0


def _cmd_predict(args) -> int:
    config = _base_config(args)
    samples = load_qe_dataset(args.input, args.pair)
    predictor = load_predictor(args.predictor)
    estimator = load_estimator(args.estimator)
    src_vocab = load_vocab(args.src_vocab)
    tgt_vocab = load_vocab(args.tgt_vocab)
    scores = predict_batch(estimator, predictor, samples, src_vocab, tgt_vocab)
    out_path = Path(args.out) if args.out else _out_dir(config) / "predictions.tsv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(out_path, samples, scores)
    print(f"wrote {len(samples)} predictions to {out_path}")
    return 0


def _cmd_ensemble_fit(args) -> int:
    config = _base_config(args)
    rows = load_feature_csv(args.features)
    grid = list(config.ridge_grid) if args.kind == "ridge" else None
    model, cv = stack_fit(rows, args.kind, k=args.folds, hyper_grid=grid,
                          rng=_rng(config.seed, "cli", "ensemble-fit"))
    out_path = Path(args.out) if args.out else _out_dir(config) / "meta.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_meta_model(out_path, model)
    print(f"fit {cv.kind} meta-model on {len(rows)} rows; "
          f"chose {cv.chosen_setting()} (mean fold Pearson {cv.mean_scores[cv.chosen]:.4f})")
    print(f"wrote {out_path}")
    return 0


def _cmd_ensemble_predict(args) -> int:
    config = _base_config(args)
    rows = load_feature_csv(args.features)
    model = load_meta_model(args.model)
    scores = meta_predict(model, rows)
    out_path = Path(args.out) if args.out else _out_dir(config) / "ensemble.scores.txt"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        for s in scores:
            f.write(f"{float(s)!r}\n")
    print(f"wrote {len(rows)} ensemble scores to {out_path}")
    return 0


def _cmd_evaluate(args) -> int:
    pred_rows = load_predictions(args.pred)
    gold_rows = load_predictions(args.gold)
    if len(pred_rows) != len(gold_rows):
        raise ValueError(f"{len(pred_rows)} predictions vs {len(gold_rows)} golds")
    for (pi, pp, _), (gi, gp, _) in zip(pred_rows, gold_rows):
        if (pi, pp) != (gi, gp):
            raise ValueError(f"prediction/gold row mismatch: ({pi}, {pp}) vs ({gi}, {gp})")
    scored = [ScoredPrediction(p, g, pair)
              for (_, pair, p), (_, _, g) in zip(pred_rows, gold_rows)]
    pairs = sorted({sp.language_pair for sp in scored})
    grouping = {p: pooled_label(pairs) for p in pairs} if len(pairs) > 1 else None
    eval_report = report(scored, grouping)
    overall = pearson([sp.predicted for sp in scored], [sp.gold for sp in scored])
    if args.json:
        payload = json.loads(eval_report.to_json())
        payload["overall"] = overall
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(eval_report.to_text())
        print(f"overall r={overall:.4f}")
    return 0


def _cmd_experiment(args) -> int:
    config = _base_config(args)
    overrides = {}
    if args.data_root is not None:
        overrides["data_root"] = args.data_root
    if args.pairs is not None:
        overrides["eval_pairs"] = tuple(p.strip() for p in args.pairs.split(",") if p.strip())
    if overrides:
        config = dataclasses.replace(config, **overrides)
    ensure_benchmark(config.data_root)
    eval_report = run_experiment_preset(args.preset, config)
    config = dataclasses.replace(config, preset=args.preset)
    run_dir = Path(config.out_dir) / f"{args.preset}-{config_hash(config)}"
    print(eval_report.to_text())
    print(f"run directory: {run_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="experiment seed")
    common.add_argument("--config", default=None, help="ExperimentConfig JSON file")
    common.add_argument("--out-dir", default=None, help="artifact output directory")

    parser = argparse.ArgumentParser(
        prog="qeforge",
        description="Translation quality estimation: predictor-estimator training, "
                    "stacked ensembles, and experiment presets on synthetic corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-predictor", parents=[common],
                       help="train a masked word-prediction model on parallel text")
    p.add_argument("--train", required=True, help="parallel TSV (source<TAB>target)")
    p.add_argument("--valid", default=None, help="parallel TSV; defaults to the training file")
    p.add_argument("--arch", choices=["rnn", "transformer"], default=None)
    p.add_argument("--loss", choices=["ce", "nce", "neg"], default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=_cmd_train_predictor)

    p = sub.add_parser("train-estimator", parents=[common],
                       help="train the quality estimator on QE-scored sentences")
    p.add_argument("--qe-train", required=True, help="QE TSV (source<TAB>target<TAB>score)")
    p.add_argument("--qe-valid", default=None, help="QE TSV; defaults to the training file")
    p.add_argument("--pair", required=True, help="language pair tag, e.g. en-de")
    p.add_argument("--predictor", required=True, help="predictor checkpoint")
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.set_defaults(func=_cmd_train_estimator)

    p = sub.add_parser("predict", parents=[common],
                       help="score sentences with a trained predictor + estimator")
    p.add_argument("--input", required=True, help="QE TSV to score")
    p.add_argument("--pair", required=True)
    p.add_argument("--predictor", required=True)
    p.add_argument("--estimator", required=True)
    p.add_argument("--src-vocab", required=True)
    p.add_argument("--tgt-vocab", required=True)
    p.add_argument("--out", default=None, help="prediction file (default out-dir/predictions.tsv)")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("ensemble-fit", parents=[common],
                       help="fit a stacking meta-regressor on a feature CSV")
    p.add_argument("--features", required=True, help="feature CSV with targets")
    p.add_argument("--kind", choices=["ridge", "gbt"], default="ridge")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", default=None, help="meta-model JSON (default out-dir/meta.json)")
    p.set_defaults(func=_cmd_ensemble_fit)

    p = sub.add_parser("ensemble-predict", parents=[common],
                       help="score feature rows with a saved meta-model")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True, help="meta-model JSON")
    p.add_argument("--out", default=None, help="scores file (default out-dir/ensemble.scores.txt)")
    p.set_defaults(func=_cmd_ensemble_predict)

    p = sub.add_parser("evaluate", parents=[common],
                       help="Pearson report from prediction and gold files")
    p.add_argument("--pred", required=True, help="prediction TSV (index, pair, score)")
    p.add_argument("--gold", required=True, help="gold TSV in the same format")
    p.add_argument("--json", action="store_true", help="emit the report as JSON")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", parents=[common],
                       help="run a named preset end to end on the synthetic benchmark")
    p.add_argument("--preset", required=True,
                   help=f"one of: {', '.join(PRESETS)}")
    p.add_argument("--data-root", default=None,
                   help="benchmark directory (generated there if absent)")
    p.add_argument("--pairs", default=None,
                   help="comma-separated evaluation pairs (default en-de,en-zh)")
    p.set_defaults(func=_cmd_experiment)
    return parser


def run_subcommand(argv) -> int:
    """Parse argv and run one subcommand; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, NotADirectoryError, IsADirectoryError,
            PermissionError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return run_subcommand(sys.argv[1:] if argv is None else argv)
