"""Predictor training loop: minibatch SGD with Adam over summed
per-sentence losses, gradient clipping, and a validation-best snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import nn
from ..corpus import NoiseDistribution, ParallelPair, Vocab, encode, noise_distribution, sample_negatives
from .losses import ce_loss, nce_loss, neg_loss
from .model import PredictorConfig, PredictorParams, backward_states, build_predictor, forward_states, verify_vocabs


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float        # mean per-token value of the training objective
    valid_ce: float          # mean per-token cross entropy on the validation set
    valid_accuracy: float    # argmax token accuracy on the validation set


def _acc(grads: dict, name: str, val: np.ndarray) -> None:
    if name in grads:
        grads[name] += val
    else:
        grads[name] = val


def _pair_loss_and_grads(
    params: PredictorParams,
    x_ids: list[int],
    y_ids: list[int],
    dist: NoiseDistribution | None,
    rng: np.random.Generator,
    batch_grads: dict,
) -> float:
    """Summed loss over the pair's target positions; gradients accumulate."""
    cfg = params.config
    proj_w = params.tensors["proj_w"]
    states, cache = forward_states(params, x_ids, y_ids, training=True, rng=rng)
    targets = y_ids[1:-1]
    if cfg.loss == "ce":
        logits = states @ proj_w
        probs = nn.softmax(logits)
        total = 0.0
        dlogits = np.empty_like(probs)
        for j, t in enumerate(targets):
            loss_j, dl = ce_loss(probs[j], t)
            total += loss_j
            dlogits[j] = dl
        _acc(batch_grads, "proj_w", states.T @ dlogits)
        dstates = dlogits @ proj_w.T
    else:
        total = 0.0
        dstates = np.empty_like(states)
        dproj = np.zeros_like(proj_w)
        for j, t in enumerate(targets):
            exclude = t if cfg.neg_exclude_target else None
            negatives = sample_negatives(dist, cfg.k_negatives, exclude, rng)
            if cfg.loss == "nce":
                loss_j, ds, dw_cols = nce_loss(states[j], proj_w, t, negatives, dist, cfg.k_negatives)
            else:
                loss_j, ds, dw_cols = neg_loss(states[j], proj_w, t, negatives)
            total += loss_j
            dstates[j] = ds
            for col, g in dw_cols.items():
                dproj[:, col] += g
        _acc(batch_grads, "proj_w", dproj)
    pair_grads = backward_states(params, cache, dstates)
    for name, g in pair_grads.items():
        _acc(batch_grads, name, g)
    return total


def validate_predictor(
    params: PredictorParams,
    pairs: Sequence[tuple[list[int], list[int]]],
) -> tuple[float, float]:
    """Mean per-token cross entropy and argmax accuracy over encoded pairs."""
    proj_w = params.tensors["proj_w"]
    total_ce = 0.0
    correct = 0
    tokens = 0
    for x_ids, y_ids in pairs:
        states, _ = forward_states(params, x_ids, y_ids, training=False)
        probs = nn.softmax(states @ proj_w)
        targets = np.asarray(y_ids[1:-1])
        p_true = np.maximum(probs[np.arange(len(targets)), targets], 1e-30)
        total_ce -= np.log(p_true).sum()
        correct += int((probs.argmax(axis=1) == targets).sum())
        tokens += len(targets)
    return total_ce / tokens, correct / tokens


def train_predictor(
    config: PredictorConfig,
    train_pairs: Sequence[ParallelPair],
    valid_pairs: Sequence[ParallelPair],
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    rng: np.random.Generator,
    init_params: PredictorParams | None = None,
) -> tuple[PredictorParams, list[EpochLog]]:
    config.validate()
    if not train_pairs:
        raise ValueError("no training pairs")
    if not valid_pairs:
        raise ValueError("no validation pairs (pass the training set to validate on it)")
    if init_params is None:
        params = build_predictor(config, src_vocab, tgt_vocab, rng)
    else:
        if init_params.config.arch != config.arch:
            raise ValueError(
                f"init params are {init_params.config.arch!r} but config wants {config.arch!r}"
            )
        verify_vocabs(init_params, src_vocab, tgt_vocab)
        params = PredictorParams(
            config,
            {k: v.copy() for k, v in init_params.tensors.items()},
            init_params.src_vocab_hash,
            init_params.tgt_vocab_hash,
        )

    enc_train = [
        (encode(p.source_tokens, src_vocab), encode(p.target_tokens, tgt_vocab)) for p in train_pairs
    ]
    enc_valid = [
        (encode(p.source_tokens, src_vocab), encode(p.target_tokens, tgt_vocab)) for p in valid_pairs
    ]
    dist = noise_distribution(tgt_vocab) if config.loss in ("nce", "neg") else None
    adam = nn.AdamState(lr=config.lr)
    logs: list[EpochLog] = []
    best_ce = np.inf
    best_tensors = None

    for epoch in range(config.epochs):
        order = rng.permutation(len(enc_train))
        epoch_loss = 0.0
        epoch_tokens = 0
        for b0 in range(0, len(order), config.batch_size):
            batch = order[b0 : b0 + config.batch_size]
            batch_grads: dict[str, np.ndarray] = {}
            batch_loss = 0.0
            for idx in batch:
                x_ids, y_ids = enc_train[idx]
                batch_loss += _pair_loss_and_grads(params, x_ids, y_ids, dist, rng, batch_grads)
                epoch_tokens += len(y_ids) - 2
            if not np.isfinite(batch_loss):
                raise FloatingPointError(
                    f"non-finite loss in epoch {epoch} batch {b0 // config.batch_size}"
                )
            nn.clip_global_norm(batch_grads)
            nn.adam_step(adam, params.tensors, batch_grads)
            epoch_loss += batch_loss
        valid_ce, valid_acc = validate_predictor(params, enc_valid)
        logs.append(EpochLog(epoch, epoch_loss / epoch_tokens, valid_ce, valid_acc))
        if valid_ce < best_ce:
            best_ce = valid_ce
            best_tensors = {k: v.copy() for k, v in params.tensors.items()}

    best = PredictorParams(config, best_tensors, params.src_vocab_hash, params.tgt_vocab_hash)
    return best, logs
