"""Experiment presets over the bundled synthetic benchmark.

Desk-scale ablation grid: per-pair predictor + estimator training, loss
and architecture variants, parallel-data augmentation tiers, donor
pretraining with embedding-free transfer, and stacked ensembles.

Every run writes its artifacts (checkpoints, prediction files, feature
CSVs, reports) into an isolated directory named by preset and config
hash.  The manifest is written last and marks a completed run; a
cumulative ``results.tsv`` keeps exactly one row per (preset, config
hash), updated under an exclusive file lock so parallel runs cannot
interleave.  All randomness derives from the experiment seed plus a
stable per-task context hash, so results do not depend on execution
order or worker count.
"""

from __future__ import annotations

import dataclasses
import fcntl
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Vocab
from .ensemble import (
    DEFAULT_RIDGE_GRID,
    assemble_features,
    meta_predict,
    save_meta_model,
    stack_fit,
    write_feature_csv,
)
from .estimator import (
    EstimatorConfig,
    predict_batch,
    save_estimator,
    train_estimator,
    write_predictions,
)
from .evaluation import EvalReport, ScoredPrediction, pearson, report
from .predictor import (
    PredictorConfig,
    PredictorParams,
    build_predictor,
    load_pretrained_excluding_embeddings,
    save_predictor,
    train_predictor,
)
from .synthetic import (
    ALL_PAIRS,
    BenchmarkSpec,
    PairData,
    load_pair_data,
    pair_files,
    pair_vocabs,
    split_pair,
    stable_seed,
    write_benchmark,
)

# ---------------------------------------------------------------------------
# presets

# Single-model presets and the training recipe each one runs.
PRESET_RECIPES = {
    "baseline": "base",
    "transformer": "transformer",
    "nce": "nce",
    "neg": "neg",
    "D1": "D1",
    "D2": "D2",
    "D3": "D3",
    "D5": "D5",
    "pretrain-et": "pretrain-et",
    "pretrain-ne": "pretrain-ne",
    "pretrain-ro": "pretrain-ro",
    "pretrain-de": "pretrain-de",
    "pretrain-zh": "pretrain-zh",
}

# Ensemble presets: the roster of sub-model recipes to stack, and the
# meta-regressor kind (None defers to ExperimentConfig.ensemble_kind).
ENSEMBLE_ROSTERS = {
    "ridge-ensemble": ("base", "nce", "neg", "D2"),
    "gbt-ensemble": ("base", "nce", "neg", "D2"),
    "ensemble-all": (
        "base", "D1", "D2", "D3", "D5",
        "pretrain-de", "pretrain-zh", "pretrain-ro", "pretrain-et", "pretrain-ne",
    ),
}
ENSEMBLE_KINDS = {"ridge-ensemble": "ridge", "gbt-ensemble": "gbt", "ensemble-all": None}

PRESETS = tuple(PRESET_RECIPES) + tuple(ENSEMBLE_ROSTERS)


def desk_predictor_config() -> PredictorConfig:
    """Predictor settings small enough for the bundled toy corpora."""
    return PredictorConfig(
        arch="rnn", hidden=64, emb_dim=32, enc_layers=1, dec_layers=1,
        tf_layers=2, heads=4, dropout=0.1, loss="ce", k_negatives=8,
        lr=1e-2, batch_size=16, epochs=6,
    )


def desk_estimator_config() -> EstimatorConfig:
    return EstimatorConfig(hidden=48, layers=1, activation="identity",
                           lr=2e-3, batch_size=32, epochs=10)


@dataclass
class ExperimentConfig:
    preset: str = "baseline"
    seed: int = 0
    data_root: str = "data/synthetic"
    out_dir: str = "runs"
    eval_pairs: tuple[str, ...] = ("en-de", "en-zh")
    predictor: PredictorConfig = field(default_factory=desk_predictor_config)
    estimator: EstimatorConfig = field(default_factory=desk_estimator_config)
    ensemble_kind: str = "gbt"
    ensemble_folds: int = 5
    ridge_grid: tuple[float, ...] = DEFAULT_RIDGE_GRID

    def validate(self) -> "ExperimentConfig":
        self.predictor.validate()
        self.estimator.validate()
        if self.ensemble_kind not in ("ridge", "gbt"):
            raise ValueError(f"ensemble_kind must be 'ridge' or 'gbt', got {self.ensemble_kind!r}")
        if self.ensemble_folds < 2:
            raise ValueError(f"ensemble_folds must be >= 2, got {self.ensemble_folds}")
        if not self.eval_pairs:
            raise ValueError("need at least one evaluation pair")
        for pair in self.eval_pairs:
            split_pair(pair)
        if not self.ridge_grid:
            raise ValueError("ridge_grid must not be empty")
        if any(a < 0 for a in self.ridge_grid):
            raise ValueError("ridge_grid entries must be >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def config_hash(config: ExperimentConfig) -> str:
    """Stable 12-hex-digit digest of the full config, seed included."""
    canonical = json.dumps(config.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _replace_dataclass(base, overrides: dict, label: str):
    if not isinstance(overrides, dict):
        raise ValueError(f"{label} settings must be a JSON object")
    try:
        return dataclasses.replace(base, **overrides)
    except TypeError as exc:
        raise ValueError(f"bad {label} settings: {exc}") from exc


def load_experiment_config(path) -> ExperimentConfig:
    """Read an ExperimentConfig from JSON, validating fields and paths."""
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    raw = dict(raw)
    predictor = _replace_dataclass(desk_predictor_config(), raw.pop("predictor", {}), "predictor")
    estimator = _replace_dataclass(desk_estimator_config(), raw.pop("estimator", {}), "estimator")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"predictor", "estimator"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"{path}: unknown config fields: {', '.join(unknown)}")
    for name in ("eval_pairs", "ridge_grid"):
        if name in raw:
            raw[name] = tuple(raw[name])
    config = ExperimentConfig(predictor=predictor, estimator=estimator, **raw).validate()
    if "data_root" in raw:
        missing = missing_benchmark_files(config.data_root, config.eval_pairs)
        if missing:
            raise FileNotFoundError(
                f"{path}: data_root {config.data_root!r} is missing {missing[0]}"
                " (run scripts/make_synthetic_data.py)"
            )
    return config


# ---------------------------------------------------------------------------
# data plumbing

def missing_benchmark_files(data_root, pairs: Sequence[str] = ALL_PAIRS) -> list[str]:
    root = Path(data_root)
    return [str(p) for pair in pairs for p in pair_files(root, pair).values() if not p.exists()]


def ensure_benchmark(data_root, spec: BenchmarkSpec = BenchmarkSpec()) -> Path:
    """Materialize the bundled synthetic benchmark if any file is absent."""
    root = Path(data_root)
    if missing_benchmark_files(root):
        write_benchmark(root, spec)
    return root


def _rng(seed: int, *context) -> np.random.Generator:
    """Generator keyed by the run seed plus a stable task context."""
    return np.random.default_rng([int(seed)] + list(stable_seed(*context)))


def _donor_pair(lang: str) -> str:
    for pair in ALL_PAIRS:
        if lang in split_pair(pair):
            return pair
    raise ValueError(f"no synthetic pair involves language {lang!r}")


def _preset_recipes(preset: str) -> tuple[str, ...]:
    if preset in PRESET_RECIPES:
        return (PRESET_RECIPES[preset],)
    return ENSEMBLE_ROSTERS[preset]


def _donor_langs(preset: str) -> list[str]:
    return [r.split("-", 1)[1] for r in _preset_recipes(preset) if r.startswith("pretrain-")]


# ---------------------------------------------------------------------------
# recipe training

def _recipe_predictor_config(recipe: str, base: PredictorConfig) -> PredictorConfig:
    if recipe == "transformer":
        return dataclasses.replace(base, arch="transformer")
    if recipe == "nce":
        return dataclasses.replace(base, loss="nce")
    if recipe == "neg":
        return dataclasses.replace(base, loss="neg")
    return base


def _recipe_train_pairs(recipe: str, data: PairData) -> list:
    pairs = list(data.parallel_base)
    if recipe in ("D1", "D2", "D3", "D5"):
        pairs += list(data.augmentation(recipe))
    return pairs


def _train_recipe(recipe: str, preset: str, config: ExperimentConfig, pair: str,
                  data: PairData, src_vocab: Vocab, tgt_vocab: Vocab,
                  donor_paths: dict[str, str]) -> PredictorParams:
    pcfg = _recipe_predictor_config(recipe, config.predictor)
    rng = _rng(config.seed, "predictor", preset, pair, recipe)
    init = None
    if recipe.startswith("pretrain-"):
        lang = recipe.split("-", 1)[1]
        fresh = build_predictor(pcfg, src_vocab, tgt_vocab, rng)
        init = load_pretrained_excluding_embeddings(fresh, donor_paths[lang])
    best, _ = train_predictor(
        pcfg, _recipe_train_pairs(recipe, data), list(data.parallel_valid),
        src_vocab, tgt_vocab, rng, init_params=init,
    )
    return best


def _train_recipe_estimator(recipe: str, preset: str, config: ExperimentConfig, pair: str,
                            data: PairData, predictor: PredictorParams,
                            src_vocab: Vocab, tgt_vocab: Vocab):
    rng = _rng(config.seed, "estimator", preset, pair, recipe)
    best, _ = train_estimator(
        config.estimator, list(data.qe_train), list(data.qe_valid),
        predictor, src_vocab, tgt_vocab, rng,
    )
    return best


def _maybe_pearson(pred, gold) -> float | None:
    try:
        return float(pearson(pred, gold))
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# per-pair pipeline

@dataclass
class PairResult:
    pair: str
    dev_scored: list[ScoredPrediction]
    test_scored: list[ScoredPrediction]
    submodel_dev_pearson: dict[str, float | None]
    artifacts: list[str]


def _scored(samples, scores, pair: str) -> list[ScoredPrediction]:
    return [ScoredPrediction(float(p), float(s.score), pair) for p, s in zip(scores, samples)]


def _run_pair(preset: str, config: ExperimentConfig, pair: str, run_dir_s: str,
              donor_paths: dict[str, str]) -> PairResult:
    run_dir = Path(run_dir_s)
    data = load_pair_data(config.data_root, pair)
    src_vocab, tgt_vocab = pair_vocabs(data)
    dev_samples, test_samples = list(data.qe_valid), list(data.qe_test)
    artifacts: list[str] = []
    sub_r: dict[str, float | None] = {}

    dev_lists, test_lists = [], []
    for recipe in _preset_recipes(preset):
        predictor = _train_recipe(recipe, preset, config, pair, data,
                                  src_vocab, tgt_vocab, donor_paths)
        estimator = _train_recipe_estimator(recipe, preset, config, pair, data,
                                            predictor, src_vocab, tgt_vocab)
        dev = predict_batch(estimator, predictor, dev_samples, src_vocab, tgt_vocab)
        test = predict_batch(estimator, predictor, test_samples, src_vocab, tgt_vocab)
        dev_lists.append(dev)
        test_lists.append(test)
        sub_r[recipe] = _maybe_pearson(dev, [s.score for s in dev_samples])
        if preset in PRESET_RECIPES:
            for name, saver, obj in ((f"{pair}.predictor.ckpt", save_predictor, predictor),
                                     (f"{pair}.estimator.ckpt", save_estimator, estimator)):
                saver(run_dir / name, obj)
                artifacts.append(name)

    if preset in ENSEMBLE_ROSTERS:
        dev_rows = assemble_features(dev_lists, dev_samples, with_targets=True)
        test_rows = assemble_features(test_lists, test_samples, with_targets=False)
        kind = ENSEMBLE_KINDS[preset] or config.ensemble_kind
        grid = list(config.ridge_grid) if kind == "ridge" else None
        model, cv = stack_fit(dev_rows, kind, k=config.ensemble_folds,
                              hyper_grid=grid, rng=_rng(config.seed, "stack", preset, pair))
        dev_scores = meta_predict(model, dev_rows)
        test_scores = meta_predict(model, test_rows)
        write_feature_csv(run_dir / f"{pair}.features.dev.csv", dev_rows)
        save_meta_model(run_dir / f"{pair}.meta.json", model)
        (run_dir / f"{pair}.cv.json").write_text(
            json.dumps(dataclasses.asdict(cv), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        artifacts += [f"{pair}.features.dev.csv", f"{pair}.meta.json", f"{pair}.cv.json"]
    else:
        dev_scores, test_scores = dev_lists[0], test_lists[0]

    write_predictions(run_dir / f"{pair}.dev.pred.tsv", dev_samples, dev_scores)
    write_predictions(run_dir / f"{pair}.test.pred.tsv", test_samples, test_scores)
    artifacts += [f"{pair}.dev.pred.tsv", f"{pair}.test.pred.tsv"]
    return PairResult(pair, _scored(dev_samples, dev_scores, pair),
                      _scored(test_samples, test_scores, pair), sub_r, artifacts)


# ---------------------------------------------------------------------------
# donors, parallelism, results table

def _prepare_donors(preset: str, config: ExperimentConfig, run_dir: Path) -> dict[str, str]:
    donor_paths: dict[str, str] = {}
    for lang in _donor_langs(preset):
        donor_pair = _donor_pair(lang)
        data = load_pair_data(config.data_root, donor_pair)
        src_vocab, tgt_vocab = pair_vocabs(data)
        best, _ = train_predictor(
            config.predictor,
            list(data.parallel_base) + list(data.parallel_pool),
            list(data.parallel_valid),
            src_vocab, tgt_vocab, _rng(config.seed, "donor", donor_pair),
        )
        path = run_dir / f"donor-{donor_pair}.ckpt"
        save_predictor(path, best)
        donor_paths[lang] = str(path)
    return donor_paths


def worker_count() -> int:
    raw = os.environ.get("QEFORGE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"QEFORGE_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _map_pairs(tasks: list[tuple]) -> list[PairResult]:
    workers = min(worker_count(), len(tasks))
    if workers <= 1:
        return [_run_pair(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_pair, *t) for t in tasks]
        return [f.result() for f in futures]


def _read_results(path: Path) -> list[dict[str, str]]:
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        return []
    cols = lines[0].split("\t")
    return [dict(zip(cols, line.split("\t"))) for line in lines[1:] if line]


def update_results_table(path, row: dict[str, str]) -> None:
    """Insert or replace the row keyed by (preset, config_hash)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lock_path = path.with_name(path.name + ".lock")
    with open(lock_path, "w", encoding="utf-8") as lock_file:
        fcntl.flock(lock_file, fcntl.LOCK_EX)
        try:
            key = (row["preset"], row["config_hash"])
            rows = [r for r in _read_results(path)
                    if (r.get("preset"), r.get("config_hash")) != key]
            rows.append({k: str(v) for k, v in row.items()})
            fixed = ["preset", "config_hash", "seed"]
            metrics = sorted({k for r in rows for k in r} - set(fixed))
            cols = fixed + metrics
            tmp = path.with_name(path.name + ".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                f.write("\t".join(cols) + "\n")
                for r in sorted(rows, key=lambda r: (r.get("preset", ""), r.get("config_hash", ""))):
                    f.write("\t".join(r.get(c, "") for c in cols) + "\n")
            os.replace(tmp, path)
        finally:
            fcntl.flock(lock_file, fcntl.LOCK_UN)


# ---------------------------------------------------------------------------
# the preset runner

def pooled_label(eval_pairs: Sequence[str]) -> str:
    """Pooled-group column name; the stock pair set keeps its table name."""
    if set(eval_pairs) == {"en-de", "en-zh"}:
        return "zh+de"
    return "pooled"


def run_experiment_preset(preset: str, config: ExperimentConfig) -> EvalReport:
    """Train the preset's models, write artifacts, and update results.tsv.

    The manifest is written only after every artifact is in place, so a
    directory without one is an aborted run, never a silently partial one.
    """
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; valid presets: {', '.join(PRESETS)}")
    config = dataclasses.replace(config, preset=preset)
    config.validate()
    missing = missing_benchmark_files(config.data_root, config.eval_pairs)
    if missing:
        raise FileNotFoundError(
            f"benchmark data missing under {config.data_root!r}: {missing[0]}"
            " (run scripts/make_synthetic_data.py)"
        )
    chash = config_hash(config)
    run_dir = Path(config.out_dir) / f"{preset}-{chash}"
    run_dir.mkdir(parents=True, exist_ok=True)

    donor_paths = _prepare_donors(preset, config, run_dir)
    tasks = [(preset, config, pair, str(run_dir), donor_paths) for pair in config.eval_pairs]
    results = _map_pairs(tasks)

    grouping = {pair: pooled_label(config.eval_pairs) for pair in config.eval_pairs}
    eval_report = report([sp for res in results for sp in res.test_scored], grouping)
    (run_dir / "report.txt").write_text(eval_report.to_text() + "\n", encoding="utf-8")
    (run_dir / "report.json").write_text(eval_report.to_json() + "\n", encoding="utf-8")

    artifacts = sorted(
        [a for res in results for a in res.artifacts]
        + [f"donor-{_donor_pair(lang)}.ckpt" for lang in _donor_langs(preset)]
        + ["report.txt", "report.json"]
    )
    manifest = {
        "preset": preset,
        "config_hash": chash,
        "seed": config.seed,
        "config": config.to_dict(),
        "submodel_dev_pearson": {res.pair: res.submodel_dev_pearson for res in results},
        "artifacts": artifacts,
        "report": json.loads(eval_report.to_json()),
    }
    (run_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    row: dict[str, str] = {"preset": preset, "config_hash": chash, "seed": str(config.seed)}
    for name, (r, _n) in {**eval_report.per_language, **eval_report.pooled}.items():
        row[name] = f"{r:.4f}"
    update_results_table(Path(config.out_dir) / "results.tsv", row)
    return eval_report
