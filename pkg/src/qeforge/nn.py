"""Numeric primitives with hand-derived backward passes.

Everything runs in float64 on plain numpy arrays; a "Tensor2" is a 2-D
float64 array.  No computation graph: each operation returns a cache that
its paired *_backward function consumes, and every backward pass is
validated against central finite differences (see grad_check).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Tensor2 = np.ndarray
ParamDict = dict[str, np.ndarray]

INIT_SCALE = 0.1
GRAD_CLIP_NORM = 5.0


def uniform_init(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


# ---------------------------------------------------------------------------
# elementwise activations


def sigmoid(x):
    """Numerically stable logistic; accepts scalars or arrays."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if arr.ndim else float(out)


def sigmoid_backward(y, dy):
    """dy * sigma'(x) given y = sigma(x)."""
    return dy * y * (1.0 - y)


def log_sigmoid(x):
    """log(sigma(x)) without overflow for large |x|."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over the last axis (vector or row-wise)."""
    arr = np.asarray(logits, dtype=np.float64)
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. logits given y = softmax(logits)."""
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


# ---------------------------------------------------------------------------
# affine


def affine(x: Tensor2, w: Tensor2, b: np.ndarray):
    """y = x @ w + b.  Returns (y, cache)."""
    if x.ndim != 2 or w.ndim != 2:
        raise ValueError(f"affine expects 2-D x and w, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"affine inner dimensions disagree: {x.shape} vs {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"affine bias shape {b.shape} does not match {w.shape}")
    return x @ w + b, (x, w)


def affine_backward(cache, dy: Tensor2):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


# ---------------------------------------------------------------------------
# dropout


def dropout(x: np.ndarray, rate: float, training: bool, rng: np.random.Generator | None):
    """Inverted dropout: scales kept units by 1/(1-rate); identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(mask, dy: np.ndarray) -> np.ndarray:
    return dy if mask is None else dy * mask


# ---------------------------------------------------------------------------
# LSTM cell


@dataclass
class LstmCellParams:
    """One LSTM cell; gates stored fused along the last axis in i|f|o|g order."""

    wx: np.ndarray  # (in_dim, 4*hidden)
    wh: np.ndarray  # (hidden, 4*hidden)
    b: np.ndarray   # (4*hidden,)

    def __post_init__(self):
        hidden = self.wh.shape[0]
        if self.wh.shape != (hidden, 4 * hidden):
            raise ValueError(f"wh must be (h, 4h), got {self.wh.shape}")
        if self.wx.shape[1] != 4 * hidden:
            raise ValueError(f"wx second dim must be 4h={4 * hidden}, got {self.wx.shape}")
        if self.b.shape != (4 * hidden,):
            raise ValueError(f"b must be (4h,), got {self.b.shape}")

    @property
    def hidden(self) -> int:
        return self.wh.shape[0]

    @property
    def in_dim(self) -> int:
        return self.wx.shape[0]


def init_lstm_cell(in_dim: int, hidden: int, rng: np.random.Generator) -> LstmCellParams:
    return LstmCellParams(
        wx=uniform_init((in_dim, 4 * hidden), rng),
        wh=uniform_init((hidden, 4 * hidden), rng),
        b=np.zeros(4 * hidden),
    )


def lstm_cell_step(p: LstmCellParams, x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray):
    """Standard LSTM update; returns (h, c, cache) with cached activations."""
    h = p.hidden
    if x_t.shape != (p.in_dim,) or h_prev.shape != (h,) or c_prev.shape != (h,):
        raise ValueError(
            f"lstm_cell_step shape mismatch: x {x_t.shape}, h {h_prev.shape}, "
            f"c {c_prev.shape} for cell in={p.in_dim} hidden={h}"
        )
    z = x_t @ p.wx + h_prev @ p.wh + p.b
    i = sigmoid(z[:h])
    f = sigmoid(z[h : 2 * h])
    o = sigmoid(z[2 * h : 3 * h])
    g = np.tanh(z[3 * h :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h_t = o * tc
    cache = (x_t, h_prev, c_prev, i, f, o, g, tc)
    return h_t, c, cache


@dataclass
class LstmCellGrads:
    wx: np.ndarray
    wh: np.ndarray
    b: np.ndarray


def zero_cell_grads(p: LstmCellParams) -> LstmCellGrads:
    return LstmCellGrads(np.zeros_like(p.wx), np.zeros_like(p.wh), np.zeros_like(p.b))


def lstm_cell_backward(p: LstmCellParams, cache, dh: np.ndarray, dc: np.ndarray, grads: LstmCellGrads):
    """One BPTT step; accumulates into grads, returns (dx, dh_prev, dc_prev)."""
    x_t, h_prev, c_prev, i, f, o, g, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)]
    )
    grads.wx += np.outer(x_t, dz)
    grads.wh += np.outer(h_prev, dz)
    grads.b += dz
    return dz @ p.wx.T, dz @ p.wh.T, dc_prev


def lstm_run(p: LstmCellParams, xs: Tensor2):
    """Run one direction over a (T, in_dim) sequence from zero state."""
    T = xs.shape[0]
    hs = np.zeros((T, p.hidden))
    h = np.zeros(p.hidden)
    c = np.zeros(p.hidden)
    caches = []
    for t in range(T):
        h, c, cache = lstm_cell_step(p, xs[t], h, c)
        hs[t] = h
        caches.append(cache)
    return hs, caches


def lstm_run_backward(p: LstmCellParams, caches, dhs: Tensor2):
    """BPTT over a full sequence; dhs holds per-step output gradients."""
    T = len(caches)
    dxs = np.zeros((T, p.in_dim))
    grads = zero_cell_grads(p)
    dh = np.zeros(p.hidden)
    dc = np.zeros(p.hidden)
    for t in reversed(range(T)):
        dx, dh, dc = lstm_cell_backward(p, caches[t], dhs[t] + dh, dc, grads)
        dxs[t] = dx
    return dxs, grads


# ---------------------------------------------------------------------------
# bidirectional stacked recurrence


def bilstm_run(fwd: Sequence[LstmCellParams], bwd: Sequence[LstmCellParams], xs: Tensor2):
    """Stacked BiLSTM; output position t is [forward h_t ; backward h_t].

    Layer l > 0 consumes the 2h-wide concatenated outputs of layer l-1.
    """
    if xs.shape[0] == 0:
        raise ValueError("bilstm_run requires a non-empty sequence")
    if len(fwd) != len(bwd) or not fwd:
        raise ValueError("need equal, non-zero forward and backward layer counts")
    layer_in = xs
    layer_caches = []
    for pf, pb in zip(fwd, bwd):
        hf, cf = lstm_run(pf, layer_in)
        hb_rev, cb = lstm_run(pb, layer_in[::-1])
        hb = hb_rev[::-1]
        out = np.concatenate([hf, hb], axis=1)
        layer_caches.append((cf, cb))
        layer_in = out
    return layer_in, layer_caches


def bilstm_backward(
    fwd: Sequence[LstmCellParams],
    bwd: Sequence[LstmCellParams],
    caches,
    dout: Tensor2,
):
    """Returns (dxs, per-layer (fwd_grads, bwd_grads)) for bilstm_run."""
    grads = []
    d = dout
    for (pf, pb), (cf, cb) in zip(reversed(list(zip(fwd, bwd))), reversed(caches)):
        h = pf.hidden
        dxf, gf = lstm_run_backward(pf, cf, d[:, :h])
        dxb_rev, gb = lstm_run_backward(pb, cb, d[:, h:][::-1])
        d = dxf + dxb_rev[::-1]
        grads.append((gf, gb))
    grads.reverse()
    return d, grads


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter moment accumulators keyed like the parameter dict."""

    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: ParamDict = field(default_factory=dict)
    v: ParamDict = field(default_factory=dict)


def adam_step(state: AdamState, params: ParamDict, grads: ParamDict) -> ParamDict:
    """One Adam update with bias correction; mutates params in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


def clip_global_norm(grads: ParamDict, max_norm: float = GRAD_CLIP_NORM) -> float:
    """Scales all gradients so the global L2 norm is at most max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# ---------------------------------------------------------------------------
# finite-difference gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    per_param: dict[str, float]

    def ok(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def grad_check(
    fn: Callable[[ParamDict], tuple[float, ParamDict]],
    params: ParamDict,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare fn's analytic gradients against central finite differences.

    fn maps the parameter dict to (scalar loss, gradient dict) and must be
    deterministic.  Every element of every parameter is probed.
    """
    _, analytic = fn(params)
    per_param: dict[str, float] = {}
    worst = ("", 0.0)
    for name, p in params.items():
        ana = analytic.get(name)
        if ana is None:
            raise ValueError(f"fn returned no gradient for {name!r}")
        err = 0.0
        flat = p.reshape(-1)
        ana_flat = np.asarray(ana).reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up, _ = fn(params)
            flat[idx] = orig - step
            down, _ = fn(params)
            flat[idx] = orig
            numeric = (up - down) / (2.0 * step)
            a = ana_flat[idx]
            denom = max(abs(a), abs(numeric), 1e-6)
            err = max(err, abs(a - numeric) / denom)
        per_param[name] = err
        if err >= worst[1]:
            worst = (name, err)
    return GradCheckReport(worst[1], worst[0], per_param)
