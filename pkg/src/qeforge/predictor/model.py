"""The word-prediction model: bidirectional context encoder over the source,
forward/backward decoders over the target, attention, and an output
projection over the target vocabulary, for both the RNN and transformer
architectures.

Sequences are always the framed output of corpus.encode (BOS ... EOS), so
position j of a target with T_y real tokens sits at framed index j, with
framed index 0 = BOS and T_y + 1 = EOS.  There is no mask token: position
j is predicted from the forward decoder state after y_{j-1} and the
backward decoder state after y_{j+1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import nn
from ..corpus import Vocab, vocab_fingerprint
from .attention import scaled_dot_attention, scaled_dot_attention_backward
from . import transformer as tf

EMBEDDING_TENSORS = ("src_embed", "tgt_embed")


@dataclass(frozen=True)
class PredictorConfig:
    arch: str = "rnn"            # rnn | transformer
    hidden: int = 400            # d: decoder hidden size per direction
    emb_dim: int = 100           # rnn embedding width (transformer ties widths to d)
    enc_layers: int = 2
    dec_layers: int = 2
    tf_layers: int = 6           # transformer encoder and decoder depth
    heads: int = 4
    ff_mult: int = 4
    dropout: float | None = None  # None -> 0.5 for rnn, 0.1 for transformer
    loss: str = "ce"             # ce | nce | neg
    k_negatives: int = 100
    neg_exclude_target: bool = True
    lr: float = 2e-3
    batch_size: int = 64
    epochs: int = 10

    @property
    def dropout_rate(self) -> float:
        if self.dropout is not None:
            return self.dropout
        return 0.5 if self.arch == "rnn" else 0.1

    def validate(self) -> "PredictorConfig":
        if self.arch not in ("rnn", "transformer"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.loss not in ("ce", "nce", "neg"):
            raise ValueError(f"unknown loss {self.loss!r}")
        for name in ("hidden", "emb_dim", "enc_layers", "dec_layers", "tf_layers",
                     "heads", "ff_mult", "k_negatives", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.arch == "transformer" and self.hidden % self.heads:
            raise ValueError(f"heads={self.heads} must divide hidden={self.hidden}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout_rate}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        return self


@dataclass
class PredictorParams:
    """All trainable tensors plus the vocab fingerprints they were built for."""

    config: PredictorConfig
    tensors: dict[str, np.ndarray]
    src_vocab_hash: str
    tgt_vocab_hash: str

    @property
    def d(self) -> int:
        return self.config.hidden

    @property
    def target_vocab_size(self) -> int:
        return self.tensors["proj_w"].shape[1]

    def copy(self) -> "PredictorParams":
        return PredictorParams(
            self.config,
            {k: v.copy() for k, v in self.tensors.items()},
            self.src_vocab_hash,
            self.tgt_vocab_hash,
        )


@dataclass(frozen=True)
class QEFVSequence:
    """Per-target-token quality-estimation feature vectors, shape (T_y, 2d)."""

    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] == 0:
            raise ValueError(f"QEFVSequence needs a non-empty (T_y, 2d) array, got {self.vectors.shape}")
        if not np.isfinite(self.vectors).all():
            raise ValueError("QEFV contains non-finite values")

    def __len__(self) -> int:
        return self.vectors.shape[0]


def _cell(tensors, prefix: str) -> nn.LstmCellParams:
    return nn.LstmCellParams(tensors[f"{prefix}_wx"], tensors[f"{prefix}_wh"], tensors[f"{prefix}_b"])


def _alloc_cell(tensors, prefix: str, in_dim: int, hidden: int, rng) -> None:
    tensors[f"{prefix}_wx"] = nn.uniform_init((in_dim, 4 * hidden), rng)
    tensors[f"{prefix}_wh"] = nn.uniform_init((hidden, 4 * hidden), rng)
    tensors[f"{prefix}_b"] = nn.uniform_init((4 * hidden,), rng)


def build_predictor(
    config: PredictorConfig,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    rng: np.random.Generator,
) -> PredictorParams:
    """Allocate and initialize all tensors for the configured architecture."""
    config.validate()
    d = config.hidden
    t: dict[str, np.ndarray] = {}
    if config.arch == "rnn":
        e = config.emb_dim
        t["src_embed"] = nn.uniform_init((len(src_vocab), e), rng)
        t["tgt_embed"] = nn.uniform_init((len(tgt_vocab), e), rng)
        for l in range(config.enc_layers):
            in_dim = e if l == 0 else 2 * d
            _alloc_cell(t, f"enc{l}_f", in_dim, d, rng)
            _alloc_cell(t, f"enc{l}_b", in_dim, d, rng)
        for l in range(config.dec_layers):
            in_dim = e if l == 0 else d
            _alloc_cell(t, f"decf{l}", in_dim, d, rng)
            _alloc_cell(t, f"decb{l}", in_dim, d, rng)
        comb_in = 2 * d + 2 * e + 2 * d
    else:
        # encoder runs at width 2d so its states line up with the RNN
        # encoder's bidirectional concatenation; decoders run at width d
        t["src_embed"] = nn.uniform_init((len(src_vocab), 2 * d), rng)
        t["tgt_embed"] = nn.uniform_init((len(tgt_vocab), d), rng)
        for l in range(config.tf_layers):
            tf.alloc_encoder_layer(t, f"enc{l}", 2 * d, config.heads, config.ff_mult, rng)
            tf.alloc_decoder_layer(t, f"decf{l}", d, 2 * d, config.heads, config.ff_mult, rng)
            tf.alloc_decoder_layer(t, f"decb{l}", d, 2 * d, config.heads, config.ff_mult, rng)
        comb_in = 2 * d + 2 * d + 2 * d
    t["comb_w"] = nn.uniform_init((comb_in, 2 * d), rng)
    t["comb_b"] = nn.uniform_init((2 * d,), rng)
    t["proj_w"] = nn.uniform_init((2 * d, len(tgt_vocab)), rng)
    return PredictorParams(config, t, vocab_fingerprint(src_vocab), vocab_fingerprint(tgt_vocab))


def verify_vocabs(params: PredictorParams, src_vocab: Vocab, tgt_vocab: Vocab) -> None:
    if vocab_fingerprint(src_vocab) != params.src_vocab_hash:
        raise ValueError("source vocab fingerprint does not match the predictor's")
    if vocab_fingerprint(tgt_vocab) != params.tgt_vocab_hash:
        raise ValueError("target vocab fingerprint does not match the predictor's")


# ---------------------------------------------------------------------------
# RNN stacks


def _stack_forward(tensors, prefixes, xs, rate, training, rng):
    cur = xs
    caches = []
    for prefix in prefixes:
        dropped, mask = nn.dropout(cur, rate, training, rng)
        hs, cs = nn.lstm_run(_cell(tensors, prefix), dropped)
        caches.append((mask, cs))
        cur = hs
    return cur, caches


def _stack_backward(tensors, prefixes, caches, dhs, grads):
    d = dhs
    for prefix, (mask, cs) in zip(reversed(prefixes), reversed(caches)):
        dxs, g = nn.lstm_run_backward(_cell(tensors, prefix), cs, d)
        _acc_cell(grads, prefix, g)
        d = nn.dropout_backward(mask, dxs)
    return d


def _acc_cell(grads, prefix, g: nn.LstmCellGrads):
    for name, arr in ((f"{prefix}_wx", g.wx), (f"{prefix}_wh", g.wh), (f"{prefix}_b", g.b)):
        if name in grads:
            grads[name] += arr
        else:
            grads[name] = arr


def _encoder_rnn_forward(tensors, cfg, emb, training, rng):
    rate = cfg.dropout_rate
    cur = emb
    caches = []
    for l in range(cfg.enc_layers):
        dropped, mask = nn.dropout(cur, rate, training, rng)
        pf, pb = _cell(tensors, f"enc{l}_f"), _cell(tensors, f"enc{l}_b")
        hf, cf = nn.lstm_run(pf, dropped)
        hb_rev, cb = nn.lstm_run(pb, dropped[::-1])
        cur = np.concatenate([hf, hb_rev[::-1]], axis=1)
        caches.append((mask, cf, cb))
    return cur, caches


def _encoder_rnn_backward(tensors, cfg, caches, dout, grads):
    d = dout
    for l in reversed(range(cfg.enc_layers)):
        mask, cf, cb = caches[l]
        pf, pb = _cell(tensors, f"enc{l}_f"), _cell(tensors, f"enc{l}_b")
        h = pf.hidden
        dxf, gf = nn.lstm_run_backward(pf, cf, d[:, :h])
        dxb_rev, gb = nn.lstm_run_backward(pb, cb, np.ascontiguousarray(d[:, h:][::-1]))
        _acc_cell(grads, f"enc{l}_f", gf)
        _acc_cell(grads, f"enc{l}_b", gb)
        d = nn.dropout_backward(mask, dxf + dxb_rev[::-1])
    return d


# ---------------------------------------------------------------------------
# shared forward/backward over pre-projection states


def forward_states(
    params: PredictorParams,
    x_ids: list[int],
    y_ids: list[int],
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Per-position pre-projection states for a framed (x, y) pair.

    Returns (states, cache): states has one 2d-row per real target
    position j = 1..T_y.
    """
    cfg = params.config
    t = params.tensors
    n = len(y_ids)
    if n < 3:
        raise ValueError("target must contain at least one real token inside the framing")
    if len(x_ids) < 3:
        raise ValueError("source must contain at least one real token inside the framing")
    if max(x_ids) >= t["src_embed"].shape[0]:
        raise ValueError("source id out of range for the model's vocabulary")
    if max(y_ids) >= t["tgt_embed"].shape[0]:
        raise ValueError("target id out of range for the model's vocabulary")
    rate = cfg.dropout_rate

    src_emb = t["src_embed"][x_ids]
    tgt_emb = t["tgt_embed"][y_ids]
    if cfg.arch == "rnn":
        enc_out, enc_cache = _encoder_rnn_forward(t, cfg, src_emb, training, rng)
        fprefixes = [f"decf{l}" for l in range(cfg.dec_layers)]
        bprefixes = [f"decb{l}" for l in range(cfg.dec_layers)]
        fstates, fcache = _stack_forward(t, fprefixes, tgt_emb, rate, training, rng)
        bstates_rev, bcache = _stack_forward(t, bprefixes, tgt_emb[::-1], rate, training, rng)
        bstates = bstates_rev[::-1]
        arch_cache = (enc_cache, fcache, bcache)
    else:
        enc_out, enc_cache = tf.encoder_forward(t, cfg, src_emb, training, rng)
        fstates, fcache = tf.decoder_forward(t, cfg, "decf", tgt_emb, enc_out, "causal", training, rng)
        bstates, bcache = tf.decoder_forward(t, cfg, "decb", tgt_emb, enc_out, "anticausal", training, rng)
        arch_cache = (enc_cache, fcache, bcache)

    # s_j = [forward state after y_{j-1} ; backward state after y_{j+1}]
    s_raw = np.concatenate([fstates[: n - 2], bstates[2:]], axis=1)
    attn_out, attn_cache = scaled_dot_attention(s_raw, enc_out, enc_out)
    emb_prev = tgt_emb[: n - 2]
    emb_next = tgt_emb[2:]
    comb_in = np.concatenate([s_raw, emb_prev, emb_next, attn_out], axis=1)
    comb_out = np.tanh(comb_in @ t["comb_w"] + t["comb_b"])
    states, state_mask = nn.dropout(comb_out, rate, training, rng)
    cache = {
        "x_ids": x_ids,
        "y_ids": y_ids,
        "arch": arch_cache,
        "attn": attn_cache,
        "comb_in": comb_in,
        "comb_out": comb_out,
        "state_mask": state_mask,
    }
    return states, cache


def backward_states(params: PredictorParams, cache, dstates: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of everything below the pre-projection states."""
    cfg = params.config
    t = params.tensors
    x_ids, y_ids = cache["x_ids"], cache["y_ids"]
    n = len(y_ids)
    d = cfg.hidden
    e = t["tgt_embed"].shape[1]
    grads: dict[str, np.ndarray] = {}

    dcomb_out = nn.dropout_backward(cache["state_mask"], dstates)
    dcomb_pre = dcomb_out * (1.0 - cache["comb_out"] ** 2)
    comb_in = cache["comb_in"]
    grads["comb_w"] = comb_in.T @ dcomb_pre
    grads["comb_b"] = dcomb_pre.sum(axis=0)
    dcomb_in = dcomb_pre @ t["comb_w"].T

    ds_raw = dcomb_in[:, : 2 * d].copy()
    demb_prev = dcomb_in[:, 2 * d : 2 * d + e]
    demb_next = dcomb_in[:, 2 * d + e : 2 * d + 2 * e]
    dattn = dcomb_in[:, 2 * d + 2 * e :]

    dq, dk, dv = scaled_dot_attention_backward(cache["attn"], dattn)
    ds_raw += dq
    denc_out = dk + dv

    dfstates = np.zeros((n, d))
    dfstates[: n - 2] = ds_raw[:, :d]
    dbstates = np.zeros((n, d))
    dbstates[2:] = ds_raw[:, d:]

    enc_cache, fcache, bcache = cache["arch"]
    if cfg.arch == "rnn":
        fprefixes = [f"decf{l}" for l in range(cfg.dec_layers)]
        bprefixes = [f"decb{l}" for l in range(cfg.dec_layers)]
        dtgt_f = _stack_backward(t, fprefixes, fcache, dfstates, grads)
        dtgt_b_rev = _stack_backward(t, bprefixes, bcache, np.ascontiguousarray(dbstates[::-1]), grads)
        dtgt = dtgt_f + dtgt_b_rev[::-1]
        dsrc = _encoder_rnn_backward(t, cfg, enc_cache, denc_out, grads)
    else:
        dtgt_f, denc_f = tf.decoder_backward(t, cfg, "decf", fcache, dfstates, grads)
        dtgt_b, denc_b = tf.decoder_backward(t, cfg, "decb", bcache, dbstates, grads)
        dtgt = dtgt_f + dtgt_b
        dsrc = tf.encoder_backward(t, cfg, enc_cache, denc_out + denc_f + denc_b, grads)

    demb_src = np.zeros_like(t["src_embed"])
    np.add.at(demb_src, x_ids, dsrc)
    demb_tgt = np.zeros_like(t["tgt_embed"])
    np.add.at(demb_tgt, y_ids, dtgt)
    np.add.at(demb_tgt, y_ids[: n - 2], demb_prev)
    np.add.at(demb_tgt, y_ids[2:], demb_next)
    grads["src_embed"] = demb_src
    grads["tgt_embed"] = demb_tgt
    return grads


# ---------------------------------------------------------------------------
# inference-side operations


def predict_token_distribution(
    params: PredictorParams,
    x_ids: list[int],
    y_ids: list[int],
    j: int,
    src_vocab: Vocab | None = None,
    tgt_vocab: Vocab | None = None,
) -> np.ndarray:
    """Distribution over the target vocabulary for position j (1-based)."""
    t_y = len(y_ids) - 2
    if not 1 <= j <= t_y:
        raise ValueError(f"position {j} out of range for target length {t_y}")
    if src_vocab is not None and tgt_vocab is not None:
        verify_vocabs(params, src_vocab, tgt_vocab)
    states, _ = forward_states(params, x_ids, y_ids, training=False)
    return nn.softmax(states[j - 1] @ params.tensors["proj_w"])


def extract_qefv(params: PredictorParams, x_ids: list[int], y_ids: list[int]) -> QEFVSequence:
    """QEFV_j = W[:, y_j] * s_j elementwise, for every target position."""
    if len(y_ids) < 3:
        raise ValueError("cannot extract QEFVs for an empty target")
    states, _ = forward_states(params, x_ids, y_ids, training=False)
    cols = params.tensors["proj_w"][:, y_ids[1:-1]].T
    return QEFVSequence(cols * states)
