"""Stacking ensemble: sub-model predictions become features for a meta
regressor fit on development-set rows.

Two meta regressors: closed-form ridge regression on centered features,
and gradient-boosted regression trees grown from the second-order
objective (squared-error loss, so g = prediction - target and h = 1,
split gain 0.5 * [G_L^2/(H_L+lam) + G_R^2/(H_R+lam) - G^2/(H+lam)] - gamma,
leaf weight -G/(H+lam)).  Hyperparameters are chosen by k-fold
cross validation on mean out-of-fold Pearson, then the winner is refit
on the full development set.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import QESample
from .evaluation import pearson

N_AUX = 3  # src_len, tgt_len, len_ratio

DEFAULT_RIDGE_GRID = (0.01, 0.1, 0.5, 1.0, 10.0)
DEGENERATE_FOLD_SCORE = -1.0


@dataclass(frozen=True)
class EnsembleFeatureRow:
    features: np.ndarray          # [m1..mM, src_len, tgt_len, len_ratio]
    target: float | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        if feats.ndim != 1 or feats.shape[0] < 1:
            raise ValueError(f"need a non-empty 1-d feature vector, got shape {feats.shape}")
        if not np.isfinite(feats).all():
            raise ValueError("non-finite feature value")
        if self.target is not None and not np.isfinite(self.target):
            raise ValueError("non-finite target")

    @property
    def n_models(self) -> int:
        return self.features.shape[0] - N_AUX


def assemble_features(
    predictions: Sequence[Sequence[float]],
    samples: Sequence[QESample],
    with_targets: bool = True,
) -> list[EnsembleFeatureRow]:
    """Row i = [model_1(i), ..., model_M(i), |x_i|, |y_i|, |y_i|/|x_i|]."""
    if not predictions:
        raise ValueError("no sub-model predictions to stack")
    for m, preds in enumerate(predictions):
        if len(preds) != len(samples):
            raise ValueError(
                f"sub-model {m} produced {len(preds)} predictions for {len(samples)} samples"
            )
    rows = []
    for i, sample in enumerate(samples):
        src_len = len(sample.source_tokens)   # QESample guarantees src_len >= 1
        tgt_len = len(sample.target_tokens)
        feats = [float(p[i]) for p in predictions] + [src_len, tgt_len, tgt_len / src_len]
        rows.append(EnsembleFeatureRow(np.array(feats), sample.score if with_targets else None))
    return rows


def _matrix(rows: Sequence[EnsembleFeatureRow]):
    if not rows:
        raise ValueError("no feature rows")
    width = rows[0].features.shape[0]
    for i, row in enumerate(rows):
        if row.features.shape[0] != width:
            raise ValueError(f"row {i} has {row.features.shape[0]} features, expected {width}")
    return np.stack([r.features for r in rows])


def _targets(rows: Sequence[EnsembleFeatureRow]) -> np.ndarray:
    ys = []
    for i, row in enumerate(rows):
        if row.target is None:
            raise ValueError(f"row {i} has no target; cannot train on it")
        ys.append(row.target)
    return np.asarray(ys)


# ---------------------------------------------------------------------------
# ridge


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    alpha: float
    feature_means: np.ndarray
    feature_scales: np.ndarray   # unit scales today; kept so centering stats travel together


def ridge_fit(rows: Sequence[EnsembleFeatureRow], alpha: float) -> RidgeModel:
    """Exact solve of (X^T X + alpha I) w = X^T y on centered data.

    The intercept is the target mean and is not penalized.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    x = _matrix(rows)
    y = _targets(rows)
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 rows to fit, got {x.shape[0]}")
    means = x.mean(axis=0)
    scales = np.ones_like(means)
    xc = (x - means) / scales
    yc = y - y.mean()
    gram = xc.T @ xc + alpha * np.eye(x.shape[1])
    if alpha == 0.0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise ValueError("X^T X is singular at alpha=0; use alpha > 0")
    w = np.linalg.solve(gram, xc.T @ yc)
    return RidgeModel(w, float(y.mean()), float(alpha), means, scales)


def ridge_predict(model: RidgeModel, rows: Sequence[EnsembleFeatureRow]) -> np.ndarray:
    x = _matrix(rows)
    if x.shape[1] != model.weights.shape[0]:
        raise ValueError(
            f"model was fit on {model.weights.shape[0]} features, rows have {x.shape[1]}"
        )
    return ((x - model.feature_means) / model.feature_scales) @ model.weights + model.intercept


# ---------------------------------------------------------------------------
# gradient-boosted trees


@dataclass(frozen=True)
class GbtConfig:
    rounds: int = 100
    eta: float = 0.1
    lam: float = 1.0
    gamma: float = 0.0
    max_depth: int = 3
    base_score: float | None = None   # None -> target mean

    def validate(self) -> "GbtConfig":
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lam and gamma must be >= 0")
        if self.max_depth < 0:
            raise ValueError(f"max_depth must be >= 0, got {self.max_depth}")
        return self


@dataclass
class TreeNode:
    # split node: feature/threshold/left/right set, weight None; leaf: weight set
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    weight: float | None = None

    def is_leaf(self) -> bool:
        return self.weight is not None

    def apply(self, x: np.ndarray) -> float:
        node = self
        while not node.is_leaf():
            node = node.left if x[node.feature] < node.threshold else node.right
        return node.weight

    def to_dict(self) -> dict:
        if self.is_leaf():
            return {"weight": self.weight}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "TreeNode":
        if "weight" in d:
            return TreeNode(weight=float(d["weight"]))
        return TreeNode(
            feature=int(d["feature"]),
            threshold=float(d["threshold"]),
            left=TreeNode.from_dict(d["left"]),
            right=TreeNode.from_dict(d["right"]),
        )


@dataclass
class RegressionTree:
    root: TreeNode
    max_depth: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.root.apply(row) for row in x])


@dataclass
class BoostedModel:
    base_score: float
    trees: list[RegressionTree]
    config: GbtConfig
    n_features: int


def _leaf(g: np.ndarray, h: np.ndarray, lam: float) -> TreeNode:
    return TreeNode(weight=float(-g.sum() / (h.sum() + lam)))


def _best_split(x: np.ndarray, g: np.ndarray, h: np.ndarray, lam: float, gamma: float):
    """Exact greedy search over all feature/midpoint candidates.

    Ties keep the first candidate in (feature index, threshold) order.
    Returns (gain, feature, threshold) or None when no split has gain > 0.
    """
    g_total, h_total = g.sum(), h.sum()
    parent = g_total * g_total / (h_total + lam)
    best = None
    for f in range(x.shape[1]):
        order = np.argsort(x[:, f], kind="stable")
        sv = x[order, f]
        cg = np.cumsum(g[order])
        ch = np.cumsum(h[order])
        for i in range(len(sv) - 1):
            if sv[i] == sv[i + 1]:
                continue
            gl, hl = cg[i], ch[i]
            gr, hr = g_total - gl, h_total - hl
            gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent) - gamma
            if gain > 0 and (best is None or gain > best[0]):
                best = (gain, f, (sv[i] + sv[i + 1]) / 2.0)
    return best


def _grow(x, g, h, lam, gamma, depth, max_depth) -> TreeNode:
    if depth >= max_depth or x.shape[0] < 2:
        return _leaf(g, h, lam)
    found = _best_split(x, g, h, lam, gamma)
    if found is None:
        return _leaf(g, h, lam)
    _, feature, threshold = found
    mask = x[:, feature] < threshold
    return TreeNode(
        feature=feature,
        threshold=threshold,
        left=_grow(x[mask], g[mask], h[mask], lam, gamma, depth + 1, max_depth),
        right=_grow(x[~mask], g[~mask], h[~mask], lam, gamma, depth + 1, max_depth),
    )


def gbt_fit(rows: Sequence[EnsembleFeatureRow], config: GbtConfig = GbtConfig()) -> BoostedModel:
    config.validate()
    x = _matrix(rows)
    y = _targets(rows)
    if x.shape[0] < 2:
        raise ValueError(f"need at least 2 rows to fit, got {x.shape[0]}")
    base = float(y.mean()) if config.base_score is None else float(config.base_score)
    pred = np.full(len(y), base)
    h = np.ones(len(y))
    trees: list[RegressionTree] = []
    for _ in range(config.rounds):
        g = pred - y                      # d/dpred of 0.5*(y - pred)^2
        root = _grow(x, g, h, config.lam, config.gamma, 0, config.max_depth)
        tree = RegressionTree(root, config.max_depth)
        trees.append(tree)
        pred = pred + config.eta * tree.predict(x)
    return BoostedModel(base, trees, config, x.shape[1])


def gbt_predict(model: BoostedModel, rows: Sequence[EnsembleFeatureRow]) -> np.ndarray:
    x = _matrix(rows)
    if x.shape[1] != model.n_features:
        raise ValueError(f"model was fit on {model.n_features} features, rows have {x.shape[1]}")
    pred = np.full(x.shape[0], model.base_score)
    for tree in model.trees:
        pred = pred + model.config.eta * tree.predict(x)
    return pred


def meta_predict(model, rows: Sequence[EnsembleFeatureRow]) -> np.ndarray:
    if isinstance(model, RidgeModel):
        return ridge_predict(model, rows)
    if isinstance(model, BoostedModel):
        return gbt_predict(model, rows)
    raise TypeError(f"not a meta-model: {type(model).__name__}")


# ---------------------------------------------------------------------------
# cross-validated stacking


@dataclass
class CvReport:
    kind: str
    settings: list[str]
    fold_scores: list[list[float]]   # per setting, per fold; -1.0 marks a degenerate fold
    mean_scores: list[float]
    chosen: int

    def chosen_setting(self) -> str:
        return self.settings[self.chosen]


def _fold_pearson(pred: np.ndarray, gold: np.ndarray) -> float:
    try:
        return pearson(pred, gold)
    except ValueError:
        return DEGENERATE_FOLD_SCORE


def make_folds(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Contiguous slices of one seeded shuffle: disjoint, covering, sizes differ by <= 1."""
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if n < k:
        raise ValueError(f"{n} rows cannot fill {k} folds")
    return list(np.array_split(rng.permutation(n), k))


def stack_fit(
    dev_rows: Sequence[EnsembleFeatureRow],
    regressor_kind: str,
    k: int = 5,
    hyper_grid=None,
    rng: np.random.Generator | None = None,
):
    """k-fold CV over the hyper grid, then a refit on all dev rows.

    Folds are contiguous slices of a seeded shuffle.  A fold whose
    predictions (or golds) are constant scores -1.0 rather than crashing
    the sweep; the sentinel is visible in the returned CvReport.
    """
    if regressor_kind not in ("ridge", "gbt"):
        raise ValueError(f"unknown regressor kind {regressor_kind!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    if hyper_grid is None:
        hyper_grid = list(DEFAULT_RIDGE_GRID) if regressor_kind == "ridge" else [GbtConfig()]
    if not hyper_grid:
        raise ValueError("empty hyperparameter grid")

    folds = make_folds(len(dev_rows), k, rng)
    rows = list(dev_rows)

    def fit_one(setting, training):
        if regressor_kind == "ridge":
            return ridge_fit(training, setting)
        return gbt_fit(training, setting)

    fold_scores = []
    for setting in hyper_grid:
        scores = []
        for held in folds:
            held_set = set(held.tolist())
            training = [rows[i] for i in range(len(rows)) if i not in held_set]
            model = fit_one(setting, training)
            held_rows = [rows[i] for i in held]
            pred = meta_predict(model, held_rows)
            gold = _targets(held_rows)
            scores.append(_fold_pearson(pred, gold))
        fold_scores.append(scores)
    mean_scores = [float(np.mean(s)) for s in fold_scores]
    chosen = int(np.argmax(mean_scores))
    final = fit_one(hyper_grid[chosen], rows)
    report = CvReport(
        kind=regressor_kind,
        settings=[repr(s) for s in hyper_grid],
        fold_scores=fold_scores,
        mean_scores=mean_scores,
        chosen=chosen,
    )
    return final, report


# ---------------------------------------------------------------------------
# serialization


def write_feature_csv(path, rows: Sequence[EnsembleFeatureRow]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    if rows[0].features.shape[0] < N_AUX + 1:
        raise ValueError("feature csv rows need at least one sub-model column plus length features")
    n_models = rows[0].n_models
    header = [f"m{i + 1}" for i in range(n_models)] + ["src_len", "tgt_len", "len_ratio", "target"]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            target = "" if row.target is None else repr(row.target)
            writer.writerow([repr(v) for v in row.features.tolist()] + [target])


def load_feature_csv(path) -> list[EnsembleFeatureRow]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[-1] != "target" or len(header) < N_AUX + 2:
            raise ValueError(f"{path}: not a feature csv (bad header)")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            feats = np.array([float(v) for v in rec[:-1]])
            target = None if rec[-1] == "" else float(rec[-1])
            rows.append(EnsembleFeatureRow(feats, target))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def save_meta_model(path, model) -> None:
    if isinstance(model, RidgeModel):
        payload = {
            "kind": "ridge",
            "weights": model.weights.tolist(),
            "intercept": model.intercept,
            "alpha": model.alpha,
            "feature_means": model.feature_means.tolist(),
            "feature_scales": model.feature_scales.tolist(),
        }
    elif isinstance(model, BoostedModel):
        payload = {
            "kind": "gbt",
            "base_score": model.base_score,
            "eta": model.config.eta,
            "lam": model.config.lam,
            "gamma": model.config.gamma,
            "rounds": model.config.rounds,
            "max_depth": model.config.max_depth,
            "n_features": model.n_features,
            "trees": [t.root.to_dict() for t in model.trees],
        }
    else:
        raise TypeError(f"not a meta-model: {type(model).__name__}")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, indent=2)


def load_meta_model(path):
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    kind = payload.get("kind")
    if kind == "ridge":
        return RidgeModel(
            np.asarray(payload["weights"]),
            float(payload["intercept"]),
            float(payload["alpha"]),
            np.asarray(payload["feature_means"]),
            np.asarray(payload["feature_scales"]),
        )
    if kind == "gbt":
        config = GbtConfig(
            rounds=payload["rounds"],
            eta=payload["eta"],
            lam=payload["lam"],
            gamma=payload["gamma"],
            max_depth=payload["max_depth"],
        )
        trees = [RegressionTree(TreeNode.from_dict(d), config.max_depth) for d in payload["trees"]]
        return BoostedModel(float(payload["base_score"]), trees, config, int(payload["n_features"]))
    raise ValueError(f"{path}: unknown meta-model kind {kind!r}")
