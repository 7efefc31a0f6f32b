"""Scaled dot-product attention with an analytic backward pass."""

from __future__ import annotations

import math

import numpy as np

from ..nn import Tensor2, softmax, softmax_backward

MASK_FILL = -1e9


def scaled_dot_attention(q: Tensor2, k: Tensor2, v: Tensor2, mask: Tensor2 | None = None):
    """softmax(q k^T / sqrt(d_k)) v with row-wise softmax.

    mask, if given, is added to the score matrix before the softmax
    (use MASK_FILL entries to forbid positions).  Returns (out, cache).
    """
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value row counts differ: {k.shape} vs {v.shape}")
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"query/key dims differ: {q.shape} vs {k.shape}")
    scale = 1.0 / math.sqrt(k.shape[1])
    scores = (q @ k.T) * scale
    if mask is not None:
        scores = scores + mask
    weights = softmax(scores)
    out = weights @ v
    return out, (q, k, v, weights, scale)


def scaled_dot_attention_backward(cache, dout: Tensor2):
    """Returns (dq, dk, dv) for scaled_dot_attention."""
    q, k, v, weights, scale = cache
    dv = weights.T @ dout
    dweights = dout @ v.T
    dscores = softmax_backward(weights, dweights)
    dq = (dscores @ k) * scale
    dk = (dscores.T @ q) * scale
    return dq, dk, dv
