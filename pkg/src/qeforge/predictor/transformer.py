"""Transformer encoder and direction-masked decoders for the predictor.

Post-layer-norm blocks with sinusoidal positions.  The encoder runs at
width 2d so its output matches the RNN encoder's bidirectional concat;
each decoder runs at width d and cross-attends into the 2d encoder
output through its own projection matrices.  The forward decoder uses a
causal self-attention mask, the backward decoder an anticausal one, so
the state at framed position t depends only on y_{<=t} (resp. y_{>=t}).
"""

from __future__ import annotations

import numpy as np

from .. import nn
from .attention import MASK_FILL, scaled_dot_attention, scaled_dot_attention_backward

LN_EPS = 1e-5


def _acc(grads: dict, name: str, val: np.ndarray) -> None:
    if name in grads:
        grads[name] += val
    else:
        grads[name] = val


# ---------------------------------------------------------------------------
# primitives


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(float)
    half = (d_model + 1) // 2
    div = np.exp(-np.log(10000.0) * (2.0 * np.arange(half)) / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: d_model // 2])
    return pe


def layernorm_forward(g: np.ndarray, b: np.ndarray, x: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return g * xhat + b, (g, xhat, inv)


def layernorm_backward(cache, dy: np.ndarray, grads: dict, prefix: str) -> np.ndarray:
    g, xhat, inv = cache
    _acc(grads, f"{prefix}_g", (dy * xhat).sum(axis=0))
    _acc(grads, f"{prefix}_b", dy.sum(axis=0))
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    return inv * (dxhat - m1 - xhat * m2)


def alloc_mha(t: dict, prefix: str, d_model: int, kv_dim: int, rng) -> None:
    t[f"{prefix}_wq"] = nn.uniform_init((d_model, d_model), rng)
    t[f"{prefix}_bq"] = nn.uniform_init((d_model,), rng)
    t[f"{prefix}_wk"] = nn.uniform_init((kv_dim, d_model), rng)
    t[f"{prefix}_bk"] = nn.uniform_init((d_model,), rng)
    t[f"{prefix}_wv"] = nn.uniform_init((kv_dim, d_model), rng)
    t[f"{prefix}_bv"] = nn.uniform_init((d_model,), rng)
    t[f"{prefix}_wo"] = nn.uniform_init((d_model, d_model), rng)
    t[f"{prefix}_bo"] = nn.uniform_init((d_model,), rng)


def mha_forward(t: dict, prefix: str, q_in: np.ndarray, kv_in: np.ndarray, heads: int, mask):
    q = q_in @ t[f"{prefix}_wq"] + t[f"{prefix}_bq"]
    k = kv_in @ t[f"{prefix}_wk"] + t[f"{prefix}_bk"]
    v = kv_in @ t[f"{prefix}_wv"] + t[f"{prefix}_bv"]
    d_model = q.shape[1]
    hd = d_model // heads
    outs, head_caches = [], []
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        o, c = scaled_dot_attention(q[:, sl], k[:, sl], v[:, sl], mask)
        outs.append(o)
        head_caches.append(c)
    concat = np.concatenate(outs, axis=1)
    out = concat @ t[f"{prefix}_wo"] + t[f"{prefix}_bo"]
    return out, (q_in, kv_in, concat, head_caches, heads)


def mha_backward(t: dict, prefix: str, cache, dout: np.ndarray, grads: dict):
    q_in, kv_in, concat, head_caches, heads = cache
    _acc(grads, f"{prefix}_wo", concat.T @ dout)
    _acc(grads, f"{prefix}_bo", dout.sum(axis=0))
    dconcat = dout @ t[f"{prefix}_wo"].T
    d_model = dconcat.shape[1]
    hd = d_model // heads
    dq = np.zeros((q_in.shape[0], d_model))
    dk = np.zeros((kv_in.shape[0], d_model))
    dv = np.zeros((kv_in.shape[0], d_model))
    for h, c in enumerate(head_caches):
        sl = slice(h * hd, (h + 1) * hd)
        dqh, dkh, dvh = scaled_dot_attention_backward(c, dconcat[:, sl])
        dq[:, sl], dk[:, sl], dv[:, sl] = dqh, dkh, dvh
    _acc(grads, f"{prefix}_wq", q_in.T @ dq)
    _acc(grads, f"{prefix}_bq", dq.sum(axis=0))
    _acc(grads, f"{prefix}_wk", kv_in.T @ dk)
    _acc(grads, f"{prefix}_bk", dk.sum(axis=0))
    _acc(grads, f"{prefix}_wv", kv_in.T @ dv)
    _acc(grads, f"{prefix}_bv", dv.sum(axis=0))
    dq_in = dq @ t[f"{prefix}_wq"].T
    dkv_in = dk @ t[f"{prefix}_wk"].T + dv @ t[f"{prefix}_wv"].T
    return dq_in, dkv_in


def ffn_forward(t: dict, prefix: str, x: np.ndarray):
    h1 = x @ t[f"{prefix}_w1"] + t[f"{prefix}_b1"]
    r = np.maximum(h1, 0.0)
    return r @ t[f"{prefix}_w2"] + t[f"{prefix}_b2"], (x, h1, r)


def ffn_backward(t: dict, prefix: str, cache, dy: np.ndarray, grads: dict) -> np.ndarray:
    x, h1, r = cache
    _acc(grads, f"{prefix}_w2", r.T @ dy)
    _acc(grads, f"{prefix}_b2", dy.sum(axis=0))
    dr = dy @ t[f"{prefix}_w2"].T
    dh1 = dr * (h1 > 0)
    _acc(grads, f"{prefix}_w1", x.T @ dh1)
    _acc(grads, f"{prefix}_b1", dh1.sum(axis=0))
    return dh1 @ t[f"{prefix}_w1"].T


def direction_mask(n: int, mode: str) -> np.ndarray:
    m = np.zeros((n, n))
    if mode == "causal":
        m[np.triu_indices(n, 1)] = MASK_FILL
    elif mode == "anticausal":
        m[np.tril_indices(n, -1)] = MASK_FILL
    else:
        raise ValueError(f"unknown mask mode {mode!r}")
    return m


# ---------------------------------------------------------------------------
# layers


def alloc_encoder_layer(t: dict, prefix: str, d_model: int, heads: int, ff_mult: int, rng) -> None:
    alloc_mha(t, f"{prefix}_sa", d_model, d_model, rng)
    t[f"{prefix}_ln1_g"] = np.ones(d_model)
    t[f"{prefix}_ln1_b"] = np.zeros(d_model)
    t[f"{prefix}_ff_w1"] = nn.uniform_init((d_model, ff_mult * d_model), rng)
    t[f"{prefix}_ff_b1"] = nn.uniform_init((ff_mult * d_model,), rng)
    t[f"{prefix}_ff_w2"] = nn.uniform_init((ff_mult * d_model, d_model), rng)
    t[f"{prefix}_ff_b2"] = nn.uniform_init((d_model,), rng)
    t[f"{prefix}_ln2_g"] = np.ones(d_model)
    t[f"{prefix}_ln2_b"] = np.zeros(d_model)


def alloc_decoder_layer(t: dict, prefix: str, d_model: int, kv_dim: int, heads: int, ff_mult: int, rng) -> None:
    alloc_mha(t, f"{prefix}_sa", d_model, d_model, rng)
    t[f"{prefix}_ln1_g"] = np.ones(d_model)
    t[f"{prefix}_ln1_b"] = np.zeros(d_model)
    alloc_mha(t, f"{prefix}_ca", d_model, kv_dim, rng)
    t[f"{prefix}_ln2_g"] = np.ones(d_model)
    t[f"{prefix}_ln2_b"] = np.zeros(d_model)
    t[f"{prefix}_ff_w1"] = nn.uniform_init((d_model, ff_mult * d_model), rng)
    t[f"{prefix}_ff_b1"] = nn.uniform_init((ff_mult * d_model,), rng)
    t[f"{prefix}_ff_w2"] = nn.uniform_init((ff_mult * d_model, d_model), rng)
    t[f"{prefix}_ff_b2"] = nn.uniform_init((d_model,), rng)
    t[f"{prefix}_ln3_g"] = np.ones(d_model)
    t[f"{prefix}_ln3_b"] = np.zeros(d_model)


def encoder_layer_forward(t, prefix, x, heads, rate, training, rng):
    a, a_cache = mha_forward(t, f"{prefix}_sa", x, x, heads, None)
    a_drop, a_mask = nn.dropout(a, rate, training, rng)
    x1, ln1_cache = layernorm_forward(t[f"{prefix}_ln1_g"], t[f"{prefix}_ln1_b"], x + a_drop)
    f, f_cache = ffn_forward(t, f"{prefix}_ff", x1)
    f_drop, f_mask = nn.dropout(f, rate, training, rng)
    x2, ln2_cache = layernorm_forward(t[f"{prefix}_ln2_g"], t[f"{prefix}_ln2_b"], x1 + f_drop)
    return x2, (a_cache, a_mask, ln1_cache, f_cache, f_mask, ln2_cache)


def encoder_layer_backward(t, prefix, cache, dx2, grads):
    a_cache, a_mask, ln1_cache, f_cache, f_mask, ln2_cache = cache
    dsum2 = layernorm_backward(ln2_cache, dx2, grads, f"{prefix}_ln2")
    df = nn.dropout_backward(f_mask, dsum2)
    dx1 = ffn_backward(t, f"{prefix}_ff", f_cache, df, grads) + dsum2
    dsum1 = layernorm_backward(ln1_cache, dx1, grads, f"{prefix}_ln1")
    da = nn.dropout_backward(a_mask, dsum1)
    dq_in, dkv_in = mha_backward(t, f"{prefix}_sa", a_cache, da, grads)
    return dsum1 + dq_in + dkv_in


def decoder_layer_forward(t, prefix, x, enc_out, heads, mask, rate, training, rng):
    a, a_cache = mha_forward(t, f"{prefix}_sa", x, x, heads, mask)
    a_drop, a_mask = nn.dropout(a, rate, training, rng)
    x1, ln1_cache = layernorm_forward(t[f"{prefix}_ln1_g"], t[f"{prefix}_ln1_b"], x + a_drop)
    c, c_cache = mha_forward(t, f"{prefix}_ca", x1, enc_out, heads, None)
    c_drop, c_mask = nn.dropout(c, rate, training, rng)
    x2, ln2_cache = layernorm_forward(t[f"{prefix}_ln2_g"], t[f"{prefix}_ln2_b"], x1 + c_drop)
    f, f_cache = ffn_forward(t, f"{prefix}_ff", x2)
    f_drop, f_mask = nn.dropout(f, rate, training, rng)
    x3, ln3_cache = layernorm_forward(t[f"{prefix}_ln3_g"], t[f"{prefix}_ln3_b"], x2 + f_drop)
    return x3, (a_cache, a_mask, ln1_cache, c_cache, c_mask, ln2_cache, f_cache, f_mask, ln3_cache)


def decoder_layer_backward(t, prefix, cache, dx3, grads):
    a_cache, a_mask, ln1_cache, c_cache, c_mask, ln2_cache, f_cache, f_mask, ln3_cache = cache
    dsum3 = layernorm_backward(ln3_cache, dx3, grads, f"{prefix}_ln3")
    df = nn.dropout_backward(f_mask, dsum3)
    dx2 = ffn_backward(t, f"{prefix}_ff", f_cache, df, grads) + dsum3
    dsum2 = layernorm_backward(ln2_cache, dx2, grads, f"{prefix}_ln2")
    dc = nn.dropout_backward(c_mask, dsum2)
    dx1_ca, denc = mha_backward(t, f"{prefix}_ca", c_cache, dc, grads)
    dx1 = dsum2 + dx1_ca
    dsum1 = layernorm_backward(ln1_cache, dx1, grads, f"{prefix}_ln1")
    da = nn.dropout_backward(a_mask, dsum1)
    dq_in, dkv_in = mha_backward(t, f"{prefix}_sa", a_cache, da, grads)
    return dsum1 + dq_in + dkv_in, denc


# ---------------------------------------------------------------------------
# full stacks


def encoder_forward(t, cfg, emb, training, rng):
    d_model = emb.shape[1]
    x = emb * np.sqrt(d_model) + positional_encoding(emb.shape[0], d_model)
    x, in_mask = nn.dropout(x, cfg.dropout_rate, training, rng)
    layer_caches = []
    for l in range(cfg.tf_layers):
        x, c = encoder_layer_forward(t, f"enc{l}", x, cfg.heads, cfg.dropout_rate, training, rng)
        layer_caches.append(c)
    return x, (d_model, in_mask, layer_caches)


def encoder_backward(t, cfg, cache, dout, grads):
    d_model, in_mask, layer_caches = cache
    d = dout
    for l in reversed(range(cfg.tf_layers)):
        d = encoder_layer_backward(t, f"enc{l}", layer_caches[l], d, grads)
    return nn.dropout_backward(in_mask, d) * np.sqrt(d_model)


def decoder_forward(t, cfg, stack, emb, enc_out, mode, training, rng):
    d_model = emb.shape[1]
    mask = direction_mask(emb.shape[0], mode)
    x = emb * np.sqrt(d_model) + positional_encoding(emb.shape[0], d_model)
    x, in_mask = nn.dropout(x, cfg.dropout_rate, training, rng)
    layer_caches = []
    for l in range(cfg.tf_layers):
        x, c = decoder_layer_forward(t, f"{stack}{l}", x, enc_out, cfg.heads, mask, cfg.dropout_rate, training, rng)
        layer_caches.append(c)
    return x, (d_model, in_mask, layer_caches)


def decoder_backward(t, cfg, stack, cache, dout, grads):
    d_model, in_mask, layer_caches = cache
    d = dout
    denc = None
    for l in reversed(range(cfg.tf_layers)):
        d, denc_l = decoder_layer_backward(t, f"{stack}{l}", layer_caches[l], d, grads)
        denc = denc_l if denc is None else denc + denc_l
    demb = nn.dropout_backward(in_mask, d) * np.sqrt(d_model)
    return demb, denc
