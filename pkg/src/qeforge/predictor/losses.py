"""Training losses for the word predictor: full-softmax CE and the two
sampled alternatives (noise-contrastive estimation and negative sampling).

The sampled losses score tokens as state . W[:, id] and return gradients
only for the pre-projection state and the touched projection columns.
"""

from __future__ import annotations

import numpy as np

from ..corpus import NoiseDistribution
from ..nn import log_sigmoid, sigmoid

CE_CLAMP = 1e-30


class ClampCounter:
    """Counts cross-entropy probability clamps (diagnostic, not an error)."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


ce_clamp_counter = ClampCounter()


def ce_loss(probs: np.ndarray, target: int):
    """-log probs[target]; returns (loss, gradient w.r.t. the logits).

    The logit gradient is probs - onehot(target), i.e. the fused
    softmax+CE backward.
    """
    p = probs[target]
    if p < CE_CLAMP:
        ce_clamp_counter.count += 1
        p = CE_CLAMP
    dlogits = probs.copy()
    dlogits[target] -= 1.0
    return -float(np.log(p)), dlogits


def _scores(state: np.ndarray, proj_w: np.ndarray, ids: list[int]) -> np.ndarray:
    return state @ proj_w[:, ids]


def nce_loss(
    state: np.ndarray,
    proj_w: np.ndarray,
    target: int,
    negatives: list[int],
    dist: NoiseDistribution,
    k: int,
):
    """Binary discrimination of the true token against k noise samples.

    J = -[log(e^s+ / (e^s+ + k Q(target)))
          + sum_w' log(1 - e^s' / (e^s' + k Q(w')))]

    Each term uses the noise mass of the word being scored.  Returns
    (loss, dstate, {column id: dW column}).
    """
    if k != len(negatives):
        raise ValueError(f"k={k} but {len(negatives)} negatives given")
    q_pos = dist.probabilities[target]
    if q_pos <= 0.0:
        raise ValueError(f"target id {target} has zero noise mass")
    q_neg = dist.probabilities[list(negatives)]
    if (q_neg <= 0.0).any():
        raise ValueError("negative sample with zero noise mass")

    s_pos = float(state @ proj_w[:, target])
    s_neg = _scores(state, proj_w, list(negatives))
    u = s_pos - np.log(k * q_pos)
    v = np.log(k * q_neg) - s_neg
    loss = -float(log_sigmoid(u)) - float(log_sigmoid(v).sum())

    ds_pos = sigmoid(u) - 1.0
    ds_neg = sigmoid(-v)  # = sigma(s' - log(k Q(w')))
    dstate = ds_pos * proj_w[:, target] + proj_w[:, list(negatives)] @ ds_neg
    dw_cols: dict[int, np.ndarray] = {target: ds_pos * state}
    for i, w in enumerate(negatives):
        col = dw_cols.setdefault(w, np.zeros_like(state))
        col += ds_neg[i] * state
    return loss, dstate, dw_cols


def neg_loss(
    state: np.ndarray,
    proj_w: np.ndarray,
    target: int,
    negatives: list[int],
):
    """word2vec-style negative sampling: J = -[log sig(s+) + sum log sig(-s')].

    Returns (loss, dstate, {column id: dW column}).
    """
    s_pos = float(state @ proj_w[:, target])
    s_neg = _scores(state, proj_w, list(negatives))
    loss = -float(log_sigmoid(s_pos)) - float(log_sigmoid(-s_neg).sum())

    ds_pos = sigmoid(s_pos) - 1.0
    ds_neg = sigmoid(s_neg)
    dstate = ds_pos * proj_w[:, target] + proj_w[:, list(negatives)] @ ds_neg
    dw_cols: dict[int, np.ndarray] = {target: ds_pos * state}
    for i, w in enumerate(negatives):
        col = dw_cols.setdefault(w, np.zeros_like(state))
        col += ds_neg[i] * state
    return loss, dstate, dw_cols
