"""Pearson correlation and grouped evaluation reports.

Pooled group scores are one correlation over the concatenated
(prediction, gold) pairs of the group's languages, not an average of
per-language correlations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class ScoredPrediction:
    predicted: float
    gold: float
    language_pair: str


def pearson(pred: Sequence[float], gold: Sequence[float]) -> float:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gold, dtype=np.float64)
    if p.ndim != 1 or g.ndim != 1:
        raise ValueError("pearson expects 1-d score sequences")
    if len(p) != len(g):
        raise ValueError(f"length mismatch: {len(p)} predictions vs {len(g)} golds")
    if len(p) < 2:
        raise ValueError(f"need at least 2 samples, got {len(p)}")
    if not (np.isfinite(p).all() and np.isfinite(g).all()):
        raise ValueError("scores must be finite")
    dp = p - p.mean()
    dg = g - g.mean()
    denom = np.sqrt((dp * dp).sum() * (dg * dg).sum())
    if denom == 0.0:
        # refusing to return 0 here: a constant sequence has no defined
        # correlation and silently reporting one hides broken models
        raise ValueError("correlation undefined: at least one sequence is constant")
    return float((dp * dg).sum() / denom)


@dataclass
class EvalReport:
    per_language: dict[str, tuple[float, int]] = field(default_factory=dict)
    pooled: dict[str, tuple[float, int]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        payload = {
            "per_language": {k: {"pearson": r, "n": n} for k, (r, n) in self.per_language.items()},
            "pooled": {k: {"pearson": r, "n": n} for k, (r, n) in self.pooled.items()},
            "warnings": list(self.warnings),
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def to_text(self) -> str:
        lines = []
        width = max([len(k) for k in list(self.per_language) + list(self.pooled)] + [8])
        lines.append(f"{'group':<{width}}  {'pearson':>8}  {'n':>5}")
        for name in sorted(self.per_language):
            r, n = self.per_language[name]
            lines.append(f"{name:<{width}}  {r:>8.4f}  {n:>5}")
        for name in sorted(self.pooled):
            r, n = self.pooled[name]
            lines.append(f"{name:<{width}}  {r:>8.4f}  {n:>5}")
        for w in self.warnings:
            lines.append(f"# {w}")
        return "\n".join(lines)


def report(
    predictions: Sequence[ScoredPrediction],
    grouping: Mapping[str, str] | None = None,
) -> EvalReport:
    """Per-language and pooled-group correlations.

    grouping maps a language pair to a pooled group name; pairs sharing a
    name are concatenated before the pooled correlation is computed.
    Groups (or languages) with fewer than 2 samples, or with constant
    scores, are reported as warnings rather than numbers.
    """
    if not predictions:
        raise ValueError("no predictions to evaluate")
    out = EvalReport()
    by_language: dict[str, list[ScoredPrediction]] = {}
    for sp in predictions:
        by_language.setdefault(sp.language_pair, []).append(sp)

    def scored(name, rows, dest):
        if len(rows) < 2:
            out.warnings.append(f"{name}: omitted ({len(rows)} sample(s), need 2)")
            return
        try:
            r = pearson([s.predicted for s in rows], [s.gold for s in rows])
        except ValueError as exc:
            out.warnings.append(f"{name}: omitted ({exc})")
            return
        dest[name] = (r, len(rows))

    for language in sorted(by_language):
        scored(language, by_language[language], out.per_language)

    if grouping:
        groups: dict[str, list[ScoredPrediction]] = {}
        for language, rows in by_language.items():
            if language in grouping:
                groups.setdefault(grouping[language], []).extend(rows)
        for name in sorted(groups):
            scored(name, groups[name], out.pooled)
    return out
