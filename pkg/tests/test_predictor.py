"""Predictor tests: loss oracles, attention oracles, finite-difference
checks on the full models, QEFV extraction, checkpoints, and transfer.
"""

import math

import numpy as np
import pytest

from qeforge import nn
from qeforge.corpus import build_vocab, encode, noise_distribution, sample_negatives
from qeforge.predictor import (
    CheckpointManifestError,
    CheckpointPayloadError,
    CheckpointVersionError,
    PredictorConfig,
    PredictorParams,
    build_predictor,
    ce_clamp_counter,
    ce_loss,
    extract_qefv,
    forward_states,
    load_predictor,
    load_pretrained_excluding_embeddings,
    nce_loss,
    neg_loss,
    predict_token_distribution,
    read_checkpoint_manifest,
    save_predictor,
    scaled_dot_attention,
    scaled_dot_attention_backward,
    train_predictor,
)
from qeforge.predictor.model import backward_states


def two_token_vocab():
    # ids: reserved 0..3, then "a" -> 4, "b" -> 5, each with mass 0.5
    return build_vocab([["a", "b"]])


# ---------------------------------------------------------------------------
# cross entropy


class TestCeLoss:
    def test_uniform_four_way(self):
        probs = np.full(4, 0.25)
        loss, dlogits = ce_loss(probs, 2)
        assert loss == pytest.approx(math.log(4.0), abs=1e-12)
        np.testing.assert_allclose(dlogits, [0.25, 0.25, -0.75, 0.25], atol=1e-12)

    def test_certain_prediction_is_free(self):
        probs = np.array([0.0, 1.0, 0.0])
        loss, dlogits = ce_loss(probs, 1)
        assert loss == 0.0
        np.testing.assert_allclose(dlogits, [0.0, 0.0, 0.0], atol=1e-12)

    def test_clamp_counts_and_bounds_loss(self):
        ce_clamp_counter.reset()
        probs = np.array([1.0, 0.0])
        loss, _ = ce_loss(probs, 1)
        assert loss == pytest.approx(-math.log(1e-30))
        assert ce_clamp_counter.count == 1
        ce_loss(probs, 1)
        assert ce_clamp_counter.count == 2
        ce_clamp_counter.reset()
        assert ce_clamp_counter.count == 0

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        logits0 = rng.normal(size=5)
        target = 3

        def fn(p):
            probs = nn.softmax(p["logits"])
            loss, dlogits = ce_loss(probs, target)
            return loss, {"logits": dlogits}

        report = nn.grad_check(fn, {"logits": logits0})
        assert report.ok(1e-6), report.per_param


# ---------------------------------------------------------------------------
# sampled losses


class TestNceLoss:
    def test_frozen_value(self):
        # zero state and zero projection with k=1 and Q=0.5 on both tokens:
        # u = -log(0.5), v = log(0.5), loss = -log sig(log 2) - log sig(-log 2)
        #   = -log(2/3) - log(1/3) = log 4.5
        vocab = two_token_vocab()
        dist = noise_distribution(vocab)
        state = np.zeros(2)
        proj = np.zeros((2, len(vocab)))
        loss, dstate, dw = nce_loss(state, proj, 4, [5], dist, k=1)
        assert loss == pytest.approx(1.5041, abs=1e-3)
        assert loss == pytest.approx(math.log(4.5), abs=1e-12)
        np.testing.assert_allclose(dstate, np.zeros(2), atol=1e-12)
        assert set(dw) == {4, 5}

    def test_k_mismatch_rejected(self):
        vocab = two_token_vocab()
        dist = noise_distribution(vocab)
        with pytest.raises(ValueError, match="negatives"):
            nce_loss(np.zeros(2), np.zeros((2, 6)), 4, [5], dist, k=3)

    def test_zero_mass_target_rejected(self):
        vocab = two_token_vocab()
        dist = noise_distribution(vocab)
        with pytest.raises(ValueError, match="zero noise mass"):
            nce_loss(np.zeros(2), np.zeros((2, 6)), 2, [5], dist, k=1)
        with pytest.raises(ValueError, match="zero noise mass"):
            nce_loss(np.zeros(2), np.zeros((2, 6)), 4, [0], dist, k=1)

    def test_gradients_match_finite_differences(self):
        vocab = build_vocab([["a", "b", "c", "c", "d"]])
        dist = noise_distribution(vocab)
        rng = np.random.default_rng(1)
        state0 = rng.normal(size=3)
        w0 = rng.normal(size=(3, len(vocab)))
        negatives = [5, 6, 5]  # duplicate column on purpose

        def fn(p):
            loss, dstate, dw = nce_loss(p["state"], p["w"], 4, negatives, dist, k=3)
            dense = np.zeros_like(p["w"])
            for col, g in dw.items():
                dense[:, col] += g
            return loss, {"state": dstate, "w": dense}

        report = nn.grad_check(fn, {"state": state0, "w": w0})
        assert report.ok(1e-6), report.per_param

    def test_reduces_to_neg_when_k_q_is_one(self):
        # uniform Q over 4 tokens with k=4 makes every k*Q(w) term equal 1
        vocab = build_vocab([["a", "b", "c", "d"]])
        dist = noise_distribution(vocab)
        rng = np.random.default_rng(2)
        state = rng.normal(size=3)
        w = rng.normal(size=(3, len(vocab)))
        negatives = [5, 6, 7, 4]
        l1, ds1, dw1 = nce_loss(state, w, 4, negatives, dist, k=4)
        l2, ds2, dw2 = neg_loss(state, w, 4, negatives)
        assert l1 == pytest.approx(l2, abs=1e-12)
        np.testing.assert_allclose(ds1, ds2, atol=1e-12)
        for col in dw1:
            np.testing.assert_allclose(dw1[col], dw2[col], atol=1e-12)


class TestNegLoss:
    def test_frozen_value(self):
        # zero scores everywhere: loss = -2 log sig(0) = 2 log 2
        loss, dstate, dw = neg_loss(np.zeros(2), np.zeros((2, 6)), 4, [5])
        assert loss == pytest.approx(2.0 * math.log(2.0), abs=1e-6)
        np.testing.assert_allclose(dstate, np.zeros(2), atol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        state0 = rng.normal(size=4)
        w0 = rng.normal(size=(4, 8))
        negatives = [5, 7]

        def fn(p):
            loss, dstate, dw = neg_loss(p["state"], p["w"], 6, negatives)
            dense = np.zeros_like(p["w"])
            for col, g in dw.items():
                dense[:, col] += g
            return loss, {"state": dstate, "w": dense}

        report = nn.grad_check(fn, {"state": state0, "w": w0})
        assert report.ok(1e-6), report.per_param

    def test_untouched_columns_get_no_gradient(self):
        rng = np.random.default_rng(4)
        state = rng.normal(size=3)
        w = rng.normal(size=(3, 10))
        _, _, dw = neg_loss(state, w, 4, [6, 6, 8])
        assert set(dw) == {4, 6, 8}


# ---------------------------------------------------------------------------
# attention


class TestAttention:
    def test_single_key_passes_value_through(self):
        q = np.array([[0.3, -1.2]])
        k = np.array([[5.0, 5.0]])
        v = np.array([[2.0, 7.0]])
        out, (_, _, _, weights, _) = scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(weights, [[1.0]], atol=1e-12)
        np.testing.assert_allclose(out, v, atol=1e-12)

    def test_identical_keys_average_values(self):
        q = np.array([[1.0, 2.0]])
        k = np.array([[0.5, 0.5], [0.5, 0.5]])
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        out, (_, _, _, weights, _) = scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(weights, [[0.5, 0.5]], atol=1e-12)
        np.testing.assert_allclose(out, [[0.5, 0.5]], atol=1e-12)

    def test_two_key_frozen_weights(self):
        # unit query against orthogonal unit keys: scores (1/sqrt 2, 0),
        # so the first weight is sig(1/sqrt 2) = 0.6698 to 4 decimals
        q = np.array([[1.0, 0.0]])
        k = np.array([[1.0, 0.0], [0.0, 1.0]])
        v = np.eye(2)
        out, (_, _, _, weights, _) = scaled_dot_attention(q, k, v)
        expected = 1.0 / (1.0 + math.exp(-1.0 / math.sqrt(2.0)))
        np.testing.assert_allclose(weights[0], [expected, 1.0 - expected], atol=1e-12)
        np.testing.assert_allclose(weights[0], [0.6698, 0.3302], atol=1e-4)
        np.testing.assert_allclose(out[0], weights[0], atol=1e-12)

    def test_mask_forbids_position(self):
        from qeforge.predictor.attention import MASK_FILL

        q = np.array([[1.0, 0.0]])
        k = np.array([[1.0, 0.0], [1.0, 0.0]])
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        mask = np.array([[0.0, MASK_FILL]])
        out, (_, _, _, weights, _) = scaled_dot_attention(q, k, v, mask)
        np.testing.assert_allclose(weights, [[1.0, 0.0]], atol=1e-12)
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        q0 = rng.normal(size=(3, 4))
        k0 = rng.normal(size=(5, 4))
        v0 = rng.normal(size=(5, 2))
        probe = rng.normal(size=(3, 2))

        def fn(p):
            out, cache = scaled_dot_attention(p["q"], p["k"], p["v"])
            dq, dk, dv = scaled_dot_attention_backward(cache, probe)
            return float((out * probe).sum()), {"q": dq, "k": dk, "v": dv}

        report = nn.grad_check(fn, {"q": q0, "k": k0, "v": v0})
        assert report.ok(1e-6), report.per_param

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            scaled_dot_attention(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros((4, 5)))
        with pytest.raises(ValueError):
            scaled_dot_attention(np.zeros((2, 3)), np.zeros((4, 3)), np.zeros((5, 5)))


# ---------------------------------------------------------------------------
# full-model finite differences


def tiny_vocabs():
    src_vocab = build_vocab([["a", "b"], ["b", "c"]])
    tgt_vocab = build_vocab([["u", "v", "w"], ["v", "w", "x"]])
    return src_vocab, tgt_vocab


def tiny_config(arch, loss):
    if arch == "rnn":
        return PredictorConfig(
            arch="rnn", hidden=3, emb_dim=2, enc_layers=1, dec_layers=1,
            loss=loss, k_negatives=2, dropout=0.0,
        )
    return PredictorConfig(
        arch="transformer", hidden=4, heads=2, tf_layers=1, ff_mult=2,
        loss=loss, k_negatives=2, dropout=0.0,
    )


def full_model_grad_report(arch, loss_name, step=1e-5):
    """Finite-difference report over every tensor of a small predictor."""
    src_vocab, tgt_vocab = tiny_vocabs()
    cfg = tiny_config(arch, loss_name)
    rng = np.random.default_rng(7)
    params = build_predictor(cfg, src_vocab, tgt_vocab, rng)
    x_ids = encode(["a", "b"], src_vocab)
    y_ids = encode(["u", "w", "v"], tgt_vocab)
    targets = y_ids[1:-1]
    dist = noise_distribution(tgt_vocab)
    neg_rng = np.random.default_rng(11)
    negs = [sample_negatives(dist, cfg.k_negatives, None, neg_rng) for _ in targets]

    def fn(tensors):
        p = PredictorParams(cfg, tensors, params.src_vocab_hash, params.tgt_vocab_hash)
        states, cache = forward_states(p, x_ids, y_ids, training=False)
        grads = {}
        if loss_name == "ce":
            probs = nn.softmax(states @ tensors["proj_w"])
            total = 0.0
            dlogits = np.empty_like(probs)
            for j, t in enumerate(targets):
                lj, dl = ce_loss(probs[j], t)
                total += lj
                dlogits[j] = dl
            grads["proj_w"] = states.T @ dlogits
            dstates = dlogits @ tensors["proj_w"].T
        else:
            total = 0.0
            dstates = np.empty_like(states)
            dproj = np.zeros_like(tensors["proj_w"])
            for j, t in enumerate(targets):
                if loss_name == "nce":
                    lj, ds, dw = nce_loss(states[j], tensors["proj_w"], t, negs[j], dist, cfg.k_negatives)
                else:
                    lj, ds, dw = neg_loss(states[j], tensors["proj_w"], t, negs[j])
                total += lj
                dstates[j] = ds
                for col, g in dw.items():
                    dproj[:, col] += g
            grads["proj_w"] = dproj
        for name, g in backward_states(p, cache, dstates).items():
            grads[name] = grads[name] + g if name in grads else g
        return total, grads

    return nn.grad_check(fn, params.tensors, step=step)


class TestFullModelGradients:
    def test_rnn_ce(self):
        report = full_model_grad_report("rnn", "ce")
        assert report.ok(1e-4), (report.worst_param, report.max_rel_error)

    def test_transformer_ce(self):
        report = full_model_grad_report("transformer", "ce")
        assert report.ok(1e-4), (report.worst_param, report.max_rel_error)

    def test_rnn_neg(self):
        report = full_model_grad_report("rnn", "neg")
        assert report.ok(1e-4), (report.worst_param, report.max_rel_error)


# ---------------------------------------------------------------------------
# model behavior


class TestPredictorModel:
    def setup_method(self):
        self.src_vocab, self.tgt_vocab = tiny_vocabs()

    def build(self, arch="rnn", seed=9):
        cfg = tiny_config(arch, "ce")
        return build_predictor(cfg, self.src_vocab, self.tgt_vocab, np.random.default_rng(seed))

    def test_init_respects_uniform_bounds(self):
        params = self.build("rnn")
        for name, tensor in params.tensors.items():
            assert np.abs(tensor).max() <= 0.1, name
        big = max(params.tensors.values(), key=lambda a: a.size)
        assert np.abs(big).max() > 0.05  # not degenerate

    def test_transformer_layernorm_init_is_identity(self):
        params = self.build("transformer")
        for name, tensor in params.tensors.items():
            if name.endswith("_g"):
                np.testing.assert_array_equal(tensor, np.ones_like(tensor))
            elif "_ln" in name and name.endswith("_b"):
                np.testing.assert_array_equal(tensor, np.zeros_like(tensor))
            else:
                assert np.abs(tensor).max() <= 0.1, name

    @pytest.mark.parametrize("arch", ["rnn", "transformer"])
    def test_state_independent_of_own_token(self, arch):
        # the position-j state conditions on y_{-j} only
        params = self.build(arch)
        x_ids = encode(["a", "b"], self.src_vocab)
        y1 = encode(["u", "v", "w"], self.tgt_vocab)
        y2 = list(y1)
        y2[2] = self.tgt_vocab.token_to_id["x"]  # change position j=2
        s1, _ = forward_states(params, x_ids, y1)
        s2, _ = forward_states(params, x_ids, y2)
        np.testing.assert_allclose(s1[1], s2[1], atol=1e-12)
        assert not np.allclose(s1[0], s2[0])  # position 1 sees y_2 as right context
        assert not np.allclose(s1[2], s2[2])  # position 3 sees y_2 as left context

    def test_states_shape(self):
        params = self.build("rnn")
        x_ids = encode(["a"], self.src_vocab)
        y_ids = encode(["u", "v", "w", "x"], self.tgt_vocab)
        states, _ = forward_states(params, x_ids, y_ids)
        assert states.shape == (4, 2 * params.config.hidden)

    def test_empty_sequences_rejected(self):
        params = self.build("rnn")
        with pytest.raises(ValueError):
            forward_states(params, encode([], self.src_vocab), encode(["u"], self.tgt_vocab))
        with pytest.raises(ValueError):
            forward_states(params, encode(["a"], self.src_vocab), encode([], self.tgt_vocab))

    def test_out_of_range_ids_rejected(self):
        params = self.build("rnn")
        with pytest.raises(ValueError, match="out of range"):
            forward_states(params, [2, 99, 3], encode(["u"], self.tgt_vocab))

    def test_distribution_sums_to_one(self):
        params = self.build("rnn")
        x_ids = encode(["a", "b"], self.src_vocab)
        y_ids = encode(["u", "v", "w"], self.tgt_vocab)
        probs = predict_token_distribution(params, x_ids, y_ids, j=2)
        assert probs.shape == (len(self.tgt_vocab),)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert (probs > 0).all()

    def test_position_out_of_range(self):
        params = self.build("rnn")
        x_ids = encode(["a"], self.src_vocab)
        y_ids = encode(["u", "v"], self.tgt_vocab)
        for j in (0, 3, -1):
            with pytest.raises(ValueError, match="out of range"):
                predict_token_distribution(params, x_ids, y_ids, j)

    def test_distribution_uses_right_context(self):
        # bidirectional conditioning: far-right token must move P(y_1 | ...)
        params = self.build("rnn")
        x_ids = encode(["a", "b"], self.src_vocab)
        y1 = encode(["u", "v", "w"], self.tgt_vocab)
        y2 = list(y1)
        y2[3] = self.tgt_vocab.token_to_id["x"]
        p1 = predict_token_distribution(params, x_ids, y1, j=1)
        p2 = predict_token_distribution(params, x_ids, y2, j=1)
        assert not np.allclose(p1, p2)

    def test_vocab_verification(self):
        params = self.build("rnn")
        x_ids = encode(["a"], self.src_vocab)
        y_ids = encode(["u", "v"], self.tgt_vocab)
        predict_token_distribution(params, x_ids, y_ids, 1, self.src_vocab, self.tgt_vocab)
        other = build_vocab([["zz", "yy"]])
        with pytest.raises(ValueError, match="fingerprint"):
            predict_token_distribution(params, x_ids, y_ids, 1, other, self.tgt_vocab)


class TestQefv:
    def setup_method(self):
        self.src_vocab, self.tgt_vocab = tiny_vocabs()
        cfg = tiny_config("rnn", "ce")
        self.params = build_predictor(cfg, self.src_vocab, self.tgt_vocab, np.random.default_rng(13))
        self.x_ids = encode(["a", "b"], self.src_vocab)
        self.y_ids = encode(["u", "v"], self.tgt_vocab)

    def test_shape(self):
        seq = extract_qefv(self.params, self.x_ids, self.y_ids)
        assert seq.vectors.shape == (2, 2 * self.params.config.hidden)
        assert len(seq) == 2

    def test_ones_column_reproduces_state(self):
        u = self.tgt_vocab.token_to_id["u"]
        self.params.tensors["proj_w"][:, u] = 1.0
        states, _ = forward_states(self.params, self.x_ids, self.y_ids)
        seq = extract_qefv(self.params, self.x_ids, self.y_ids)
        np.testing.assert_allclose(seq.vectors[0], states[0], atol=1e-12)

    def test_zero_column_zeroes_vector(self):
        v = self.tgt_vocab.token_to_id["v"]
        self.params.tensors["proj_w"][:, v] = 0.0
        seq = extract_qefv(self.params, self.x_ids, self.y_ids)
        np.testing.assert_allclose(seq.vectors[1], 0.0, atol=1e-12)
        assert np.abs(seq.vectors[0]).max() > 0.0

    def test_empty_target_rejected(self):
        with pytest.raises(ValueError):
            extract_qefv(self.params, self.x_ids, encode([], self.tgt_vocab))


# ---------------------------------------------------------------------------
# checkpoints and transfer


class TestCheckpoint:
    def setup_method(self):
        self.src_vocab, self.tgt_vocab = tiny_vocabs()
        cfg = tiny_config("rnn", "ce")
        self.params = build_predictor(cfg, self.src_vocab, self.tgt_vocab, np.random.default_rng(17))

    def test_roundtrip_is_float32_quantization(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_predictor(path, self.params)
        loaded = load_predictor(path)
        assert loaded.config == self.params.config
        assert loaded.src_vocab_hash == self.params.src_vocab_hash
        assert set(loaded.tensors) == set(self.params.tensors)
        for name, tensor in self.params.tensors.items():
            np.testing.assert_array_equal(loaded.tensors[name], tensor.astype(np.float32).astype(np.float64))

    def test_save_load_save_is_byte_identical(self, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_predictor(p1, self.params)
        save_predictor(p2, load_predictor(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_manifest_readable_without_payload(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_predictor(path, self.params)
        manifest = read_checkpoint_manifest(path)
        assert manifest["kind"] == "predictor"
        assert manifest["arch"] == "rnn"
        assert manifest["src_vocab_hash"] == self.params.src_vocab_hash
        names = {e["name"] for e in manifest["tensors"]}
        assert "proj_w" in names and "comb_w" in names

    def test_version_error(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_predictor(path, self.params)
        blob = path.read_bytes()
        path.write_bytes(bytes([9]) + blob[1:])
        with pytest.raises(CheckpointVersionError):
            load_predictor(path)

    def test_manifest_error_on_garbage_json(self, tmp_path):
        import struct

        path = tmp_path / "model.ckpt"
        junk = b"this is not json"
        path.write_bytes(struct.pack("<BI", 1, len(junk)) + junk)
        with pytest.raises(CheckpointManifestError):
            load_predictor(path)

    def test_payload_error_on_truncation(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_predictor(path, self.params)
        blob = path.read_bytes()
        path.write_bytes(blob[:-40])
        with pytest.raises(CheckpointPayloadError):
            load_predictor(path)

    def test_wrong_kind_rejected(self, tmp_path):
        from qeforge.predictor.checkpoint import save_tensors

        path = tmp_path / "other.ckpt"
        save_tensors(path, {"w": np.zeros(3)}, {"kind": "estimator"})
        with pytest.raises(CheckpointManifestError, match="kind"):
            load_predictor(path)


class TestTransfer:
    def test_everything_but_embeddings_transfers(self, tmp_path):
        cfg = tiny_config("rnn", "ce")
        src_a, tgt_a = tiny_vocabs()
        donor = build_predictor(cfg, src_a, tgt_a, np.random.default_rng(1))
        path = tmp_path / "donor.ckpt"
        save_predictor(path, donor)

        # same-shape vocabularies for a different language pair
        src_b = build_vocab([["p", "q"], ["q", "r"]])
        tgt_b = build_vocab([["k", "l", "m"], ["l", "m", "n"]])
        receiver = build_predictor(cfg, src_b, tgt_b, np.random.default_rng(2))
        merged = load_pretrained_excluding_embeddings(receiver, path)

        np.testing.assert_array_equal(merged.tensors["src_embed"], receiver.tensors["src_embed"])
        np.testing.assert_array_equal(merged.tensors["tgt_embed"], receiver.tensors["tgt_embed"])
        for name in donor.tensors:
            if name in ("src_embed", "tgt_embed"):
                continue
            np.testing.assert_array_equal(
                merged.tensors[name], donor.tensors[name].astype(np.float32).astype(np.float64)
            )
            assert not np.array_equal(merged.tensors[name], receiver.tensors[name])
        assert merged.src_vocab_hash == receiver.src_vocab_hash

    def test_shape_mismatch_lists_offenders(self, tmp_path):
        src_a, tgt_a = tiny_vocabs()
        donor = build_predictor(tiny_config("rnn", "ce"), src_a, tgt_a, np.random.default_rng(1))
        path = tmp_path / "donor.ckpt"
        save_predictor(path, donor)
        wide = PredictorConfig(arch="rnn", hidden=5, emb_dim=2, enc_layers=1, dec_layers=1, dropout=0.0)
        receiver = build_predictor(wide, src_a, tgt_a, np.random.default_rng(2))
        with pytest.raises(ValueError) as exc:
            load_pretrained_excluding_embeddings(receiver, path)
        assert "comb_w" in str(exc.value) and "proj_w" in str(exc.value)

    def test_arch_mismatch_rejected(self, tmp_path):
        src_a, tgt_a = tiny_vocabs()
        donor = build_predictor(tiny_config("rnn", "ce"), src_a, tgt_a, np.random.default_rng(1))
        path = tmp_path / "donor.ckpt"
        save_predictor(path, donor)
        receiver = build_predictor(tiny_config("transformer", "ce"), src_a, tgt_a, np.random.default_rng(2))
        with pytest.raises(ValueError, match="architecture mismatch"):
            load_pretrained_excluding_embeddings(receiver, path)


# ---------------------------------------------------------------------------
# training loop


def toy_parallel():
    from qeforge.corpus import ParallelPair

    pairs = [
        ParallelPair(("a", "b"), ("u", "v")),
        ParallelPair(("b", "a"), ("v", "u")),
        ParallelPair(("a", "c"), ("u", "w")),
        ParallelPair(("c", "b"), ("w", "v")),
        ParallelPair(("b", "c"), ("v", "w")),
        ParallelPair(("c", "a"), ("w", "u")),
    ]
    src_vocab = build_vocab([p.source_tokens for p in pairs])
    tgt_vocab = build_vocab([p.target_tokens for p in pairs])
    return pairs, src_vocab, tgt_vocab


class TestTraining:
    def test_loss_decreases_and_snapshots_best(self):
        pairs, src_vocab, tgt_vocab = toy_parallel()
        cfg = PredictorConfig(
            arch="rnn", hidden=12, emb_dim=8, enc_layers=1, dec_layers=1,
            dropout=0.0, epochs=80, batch_size=2, lr=1e-2,
        )
        params, logs = train_predictor(cfg, pairs, pairs, src_vocab, tgt_vocab, np.random.default_rng(0))
        assert len(logs) == 80
        assert logs[-1].train_loss < logs[0].train_loss
        assert logs[-1].valid_accuracy > logs[0].valid_accuracy
        best_ce = min(log.valid_ce for log in logs)
        from qeforge.predictor import validate_predictor

        enc = [(encode(p.source_tokens, src_vocab), encode(p.target_tokens, tgt_vocab)) for p in pairs]
        ce, _ = validate_predictor(params, enc)
        assert ce == pytest.approx(best_ce, abs=1e-9)

    def test_same_seed_reproduces_exactly(self):
        pairs, src_vocab, tgt_vocab = toy_parallel()
        cfg = PredictorConfig(
            arch="rnn", hidden=6, emb_dim=4, enc_layers=1, dec_layers=1,
            dropout=0.2, epochs=4, batch_size=2,
        )
        p1, _ = train_predictor(cfg, pairs, pairs, src_vocab, tgt_vocab, np.random.default_rng(42))
        p2, _ = train_predictor(cfg, pairs, pairs, src_vocab, tgt_vocab, np.random.default_rng(42))
        for name in p1.tensors:
            np.testing.assert_array_equal(p1.tensors[name], p2.tensors[name])

    def test_neg_loss_training_runs(self):
        pairs, src_vocab, tgt_vocab = toy_parallel()
        cfg = PredictorConfig(
            arch="rnn", hidden=6, emb_dim=4, enc_layers=1, dec_layers=1,
            dropout=0.0, epochs=3, batch_size=3, loss="neg", k_negatives=2,
        )
        _, logs = train_predictor(cfg, pairs, pairs, src_vocab, tgt_vocab, np.random.default_rng(1))
        assert all(np.isfinite(log.train_loss) for log in logs)

    def test_warm_start_from_init_params(self):
        pairs, src_vocab, tgt_vocab = toy_parallel()
        cfg = PredictorConfig(
            arch="rnn", hidden=6, emb_dim=4, enc_layers=1, dec_layers=1,
            dropout=0.0, epochs=2, batch_size=3,
        )
        base, _ = train_predictor(cfg, pairs, pairs, src_vocab, tgt_vocab, np.random.default_rng(2))
        warm, logs = train_predictor(
            cfg, pairs, pairs, src_vocab, tgt_vocab, np.random.default_rng(3), init_params=base
        )
        assert len(logs) == 2

    def test_zero_epochs_rejected(self):
        pairs, src_vocab, tgt_vocab = toy_parallel()
        cfg = PredictorConfig(epochs=0)
        with pytest.raises(ValueError, match="epochs"):
            train_predictor(cfg, pairs, pairs, src_vocab, tgt_vocab, np.random.default_rng(0))

    def test_empty_training_set_rejected(self):
        _, src_vocab, tgt_vocab = toy_parallel()
        with pytest.raises(ValueError, match="training"):
            train_predictor(PredictorConfig(), [], [], src_vocab, tgt_vocab, np.random.default_rng(0))
