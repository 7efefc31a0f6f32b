"""Sentence-level quality estimator.

Consumes the per-token feature vectors produced by a frozen predictor,
runs them through a BiLSTM, mean-pools over time, and projects to a
scalar score.  The predictor is never updated here; an estimator
checkpoint remembers the fingerprint of the predictor it was trained
with and refuses to score with a different one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nn
from .corpus import QESample, Vocab, encode
from .predictor.checkpoint import CheckpointManifestError, load_tensors, save_tensors
from .predictor.model import PredictorParams, extract_qefv

ACTIVATIONS = ("identity", "sigmoid")


def predictor_fingerprint(params: PredictorParams) -> str:
    """Content hash of a predictor: config, vocab hashes, float32 weights."""
    h = hashlib.sha256()
    h.update(json.dumps(asdict(params.config), sort_keys=True).encode("utf-8"))
    h.update(params.src_vocab_hash.encode("utf-8"))
    h.update(params.tgt_vocab_hash.encode("utf-8"))
    for name in sorted(params.tensors):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params.tensors[name], dtype="<f4").tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class EstimatorConfig:
    hidden: int = 400
    layers: int = 1
    activation: str = "identity"   # identity for unbounded scores, sigmoid for [0, 1]
    lr: float = 2e-3
    batch_size: int = 64
    epochs: int = 10

    def validate(self) -> "EstimatorConfig":
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        for name in ("hidden", "layers", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        return self


@dataclass
class EstimatorParams:
    config: EstimatorConfig
    tensors: dict[str, np.ndarray]
    qefv_dim: int
    predictor_hash: str

    def copy(self) -> "EstimatorParams":
        return EstimatorParams(
            self.config, {k: v.copy() for k, v in self.tensors.items()},
            self.qefv_dim, self.predictor_hash,
        )


def build_estimator(
    config: EstimatorConfig,
    qefv_dim: int,
    predictor_hash: str,
    rng: np.random.Generator,
) -> EstimatorParams:
    config.validate()
    if qefv_dim < 1:
        raise ValueError(f"qefv_dim must be >= 1, got {qefv_dim}")
    h = config.hidden
    t: dict[str, np.ndarray] = {}
    for l in range(config.layers):
        in_dim = qefv_dim if l == 0 else 2 * h
        for direction in ("f", "b"):
            t[f"est{l}_{direction}_wx"] = nn.uniform_init((in_dim, 4 * h), rng)
            t[f"est{l}_{direction}_wh"] = nn.uniform_init((h, 4 * h), rng)
            t[f"est{l}_{direction}_b"] = nn.uniform_init((4 * h,), rng)
    t["out_w"] = nn.uniform_init((2 * h,), rng)
    t["out_b"] = nn.uniform_init((1,), rng)
    return EstimatorParams(config, t, qefv_dim, predictor_hash)


def _cells(params: EstimatorParams):
    t = params.tensors
    fwd = [nn.LstmCellParams(t[f"est{l}_f_wx"], t[f"est{l}_f_wh"], t[f"est{l}_f_b"])
           for l in range(params.config.layers)]
    bwd = [nn.LstmCellParams(t[f"est{l}_b_wx"], t[f"est{l}_b_wh"], t[f"est{l}_b_b"])
           for l in range(params.config.layers)]
    return fwd, bwd


def _forward(params: EstimatorParams, qefv: np.ndarray):
    if qefv.ndim != 2 or qefv.shape[1] != params.qefv_dim:
        raise ValueError(f"expected (T, {params.qefv_dim}) feature matrix, got {qefv.shape}")
    fwd, bwd = _cells(params)
    out, caches = nn.bilstm_run(fwd, bwd, qefv)
    pooled = out.mean(axis=0)
    z = float(pooled @ params.tensors["out_w"] + params.tensors["out_b"][0])
    if params.config.activation == "sigmoid":
        y = float(nn.sigmoid(z))
    else:
        y = z
    return y, (qefv, caches, out, pooled, z, y)


def _backward(params: EstimatorParams, cache, dy: float, grads: dict) -> None:
    qefv, caches, out, pooled, z, y = cache
    if params.config.activation == "sigmoid":
        dz = dy * y * (1.0 - y)
    else:
        dz = dy
    _acc(grads, "out_w", dz * pooled)
    _acc(grads, "out_b", np.array([dz]))
    dpooled = dz * params.tensors["out_w"]
    dout = np.tile(dpooled / out.shape[0], (out.shape[0], 1))
    fwd, bwd = _cells(params)
    _, layer_grads = nn.bilstm_backward(fwd, bwd, caches, dout)
    for l, (gf, gb) in enumerate(layer_grads):
        for direction, g in (("f", gf), ("b", gb)):
            _acc(grads, f"est{l}_{direction}_wx", g.wx)
            _acc(grads, f"est{l}_{direction}_wh", g.wh)
            _acc(grads, f"est{l}_{direction}_b", g.b)


def _acc(grads: dict, name: str, val: np.ndarray) -> None:
    if name in grads:
        grads[name] += val
    else:
        grads[name] = val


def estimate_score(params: EstimatorParams, qefv: np.ndarray) -> float:
    """Score a single sentence from its (T, 2d) feature matrix."""
    score, _ = _forward(params, qefv)
    return score


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class EstimatorEpochLog:
    epoch: int
    train_mse: float
    valid_mse: float
    valid_pearson: float   # nan while predictions are degenerate


def _safe_pearson(pred: np.ndarray, gold: np.ndarray) -> float:
    if len(pred) < 2 or np.std(pred) == 0.0 or np.std(gold) == 0.0:
        return float("nan")
    return float(np.corrcoef(pred, gold)[0, 1])


def _featurize(
    predictor: PredictorParams,
    samples: Sequence[QESample],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
) -> list[np.ndarray]:
    feats = []
    for s in samples:
        x_ids = encode(s.source_tokens, src_vocab)
        y_ids = encode(s.target_tokens, tgt_vocab)
        feats.append(extract_qefv(predictor, x_ids, y_ids).vectors)
    return feats


def train_estimator(
    config: EstimatorConfig,
    train_samples: Sequence[QESample],
    valid_samples: Sequence[QESample],
    predictor: PredictorParams,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    rng: np.random.Generator,
) -> tuple[EstimatorParams, list[EstimatorEpochLog]]:
    """MSE training over a frozen predictor's features, best-MSE snapshot."""
    config.validate()
    if not train_samples:
        raise ValueError("no training samples")
    if not valid_samples:
        raise ValueError("no validation samples")
    # the predictor is frozen, so its features can be computed once
    train_feats = _featurize(predictor, train_samples, src_vocab, tgt_vocab)
    valid_feats = _featurize(predictor, valid_samples, src_vocab, tgt_vocab)
    train_gold = np.array([s.score for s in train_samples])
    valid_gold = np.array([s.score for s in valid_samples])

    params = build_estimator(config, train_feats[0].shape[1], predictor_fingerprint(predictor), rng)
    adam = nn.AdamState(lr=config.lr)
    logs: list[EstimatorEpochLog] = []
    best_mse = np.inf
    best_tensors = None

    for epoch in range(config.epochs):
        order = rng.permutation(len(train_feats))
        sq_sum = 0.0
        for b0 in range(0, len(order), config.batch_size):
            batch = order[b0 : b0 + config.batch_size]
            grads: dict[str, np.ndarray] = {}
            for idx in batch:
                pred, cache = _forward(params, train_feats[idx])
                err = pred - train_gold[idx]
                sq_sum += err * err
                _backward(params, cache, 2.0 * err / len(batch), grads)
            if not np.isfinite(sq_sum):
                raise FloatingPointError(f"non-finite loss in epoch {epoch} batch {b0 // config.batch_size}")
            nn.clip_global_norm(grads)
            nn.adam_step(adam, params.tensors, grads)
        valid_pred = np.array([estimate_score(params, f) for f in valid_feats])
        valid_mse = float(np.mean((valid_pred - valid_gold) ** 2))
        logs.append(EstimatorEpochLog(
            epoch, sq_sum / len(train_feats), valid_mse, _safe_pearson(valid_pred, valid_gold),
        ))
        if valid_mse < best_mse:
            best_mse = valid_mse
            best_tensors = {k: v.copy() for k, v in params.tensors.items()}

    best = EstimatorParams(config, best_tensors, params.qefv_dim, params.predictor_hash)
    return best, logs


def predict_batch(
    params: EstimatorParams,
    predictor: PredictorParams,
    samples: Sequence[QESample],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
) -> np.ndarray:
    """Scores in sample order; rejects a predictor the estimator wasn't trained on."""
    fp = predictor_fingerprint(predictor)
    if fp != params.predictor_hash:
        raise ValueError(
            "predictor fingerprint mismatch: this estimator was trained on a "
            "different predictor"
        )
    feats = _featurize(predictor, samples, src_vocab, tgt_vocab)
    return np.array([estimate_score(params, f) for f in feats])


# ---------------------------------------------------------------------------
# serialization


def save_estimator(path, params: EstimatorParams) -> None:
    meta = {
        "kind": "estimator",
        "config": asdict(params.config),
        "qefv_dim": params.qefv_dim,
        "predictor_hash": params.predictor_hash,
    }
    save_tensors(path, params.tensors, meta)


def load_estimator(path) -> EstimatorParams:
    tensors, manifest = load_tensors(path)
    if manifest.get("kind") != "estimator":
        raise CheckpointManifestError(f"{path}: not an estimator checkpoint (kind={manifest.get('kind')!r})")
    try:
        config = EstimatorConfig(**manifest["config"])
    except (TypeError, KeyError) as exc:
        raise CheckpointManifestError(f"{path}: bad estimator config in manifest: {exc}") from exc
    config.validate()
    return EstimatorParams(config, tensors, manifest["qefv_dim"], manifest["predictor_hash"])


def write_predictions(path, samples: Sequence[QESample], scores: np.ndarray) -> None:
    if len(samples) != len(scores):
        raise ValueError(f"{len(samples)} samples but {len(scores)} scores")
    with open(path, "w", encoding="utf-8") as f:
        for i, (sample, score) in enumerate(zip(samples, scores)):
            f.write(f"{i}\t{sample.language_pair}\t{float(score)!r}\n")


def load_predictions(path) -> list[tuple[int, str, float]]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), parts[1], float(parts[2])))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return rows
