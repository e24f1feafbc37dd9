"""Network building blocks: GRU cell, bidirectional layers, encoder with
residual, attention, decoding, initialization, and parameter counting."""

import numpy as np
import pytest

from audiocap import model
from audiocap import numgraph as ng
from audiocap.model import GruLayerParams, ModelConfig
from audiocap.numgraph import Tensor

from conftest import TINY_CONFIG


def random_gru(n_in, n_hid, rng, scale=0.5):
    def t(*shape):
        return Tensor(rng.uniform(-scale, scale, size=shape))

    return GruLayerParams(
        w_update=t(n_in, n_hid), w_reset=t(n_in, n_hid), w_cand=t(n_in, n_hid),
        u_update=t(n_hid, n_hid), u_reset=t(n_hid, n_hid), u_cand=t(n_hid, n_hid),
        b_update=t(n_hid), b_reset=t(n_hid), b_cand=t(n_hid),
    )


class TestGruCell:
    def test_all_zero_params_give_zero_state(self, rng):
        p = GruLayerParams.zeros(4, 3)
        x = rng.standard_normal((1, 4))
        h = model.gru_cell(x, np.zeros((1, 3)), p)
        np.testing.assert_array_equal(h.data, np.zeros((1, 3)))

    def test_open_update_gate_passes_candidate(self):
        # scalar cell; b_update = -100 forces z ~ 0, so h ~ tanh(w_cand * x)
        p = GruLayerParams.zeros(1, 1)
        p.b_update = Tensor(np.array([-100.0]))
        p.w_cand = Tensor(np.array([[1.0]]))
        h = model.gru_cell(np.array([[1.0]]), np.zeros((1, 1)), p)
        assert abs(h.item() - np.tanh(1.0)) < 1e-12

    def test_gradient_matches_central_differences(self, rng):
        p = random_gru(3, 4, rng)
        x = rng.standard_normal((1, 3))
        h0 = rng.standard_normal((1, 4))
        tensors = [t for _, t in p.named_tensors("cell")]

        def f():
            return ng.sum(model.gru_cell(x, h0, p))

        assert ng.gradient_check(f, tensors) < 1e-6


class TestBigruLayer:
    def test_single_step_identical_directions(self, rng):
        p = random_gru(3, 4, rng)
        X = rng.standard_normal((1, 3))
        out = model.bigru_layer(Tensor(X), p, p)
        assert out.shape == (1, 8)
        np.testing.assert_array_equal(out.data[0, :4], out.data[0, 4:])

    def test_output_width(self, rng):
        fwd, bwd = random_gru(3, 5, rng), random_gru(3, 5, rng)
        out = model.bigru_layer(Tensor(rng.standard_normal((6, 3))), fwd, bwd)
        assert out.shape == (6, 10)

    def test_time_reversal_swaps_directions(self, rng):
        # reversing the input rows and swapping direction params reverses
        # the output rows with the two halves swapped
        fwd, bwd = random_gru(3, 4, rng), random_gru(3, 4, rng)
        X = rng.standard_normal((7, 3))
        out = model.bigru_layer(Tensor(X), fwd, bwd).data
        flipped = model.bigru_layer(Tensor(X[::-1]), bwd, fwd).data
        swapped = np.concatenate([flipped[::-1, 4:], flipped[::-1, :4]], axis=1)
        np.testing.assert_allclose(out, swapped, atol=1e-12)

    def test_direction_width_mismatch(self, rng):
        with pytest.raises(ng.DimensionError):
            model.bigru_layer(Tensor(np.zeros((2, 3))), random_gru(3, 4, rng), random_gru(3, 5, rng))


class TestEncode:
    def test_output_shape_full_widths(self, rng):
        config = ModelConfig(seq_len=16, vocab_size=50, caption_steps=3)
        params = model.init_params(config, seed=0)
        X = rng.standard_normal((16, 64))
        out = model.encode(Tensor(X), params)
        assert out.shape == (16, 256)

    def test_zero_params_give_zero_output(self, rng):
        params = model.zeros_params(TINY_CONFIG)
        out = model.encode(Tensor(rng.standard_normal((5, 3))), params)
        np.testing.assert_array_equal(out.data, np.zeros((5, 6)))

    def test_residual_bypasses_zeroed_second_layer(self, rng):
        # with layer 2 zeroed, layer 3 sees exactly layer 1's output
        params = model.init_params(TINY_CONFIG, seed=3)
        layer2 = GruLayerParams.zeros(4, 2), GruLayerParams.zeros(4, 2)
        params.encoder[1] = layer2
        X = Tensor(rng.standard_normal((5, 3)))
        h1 = model.bigru_layer(X, *params.encoder[0])
        direct = model.bigru_layer(h1, *params.encoder[2])
        np.testing.assert_array_equal(model.encode(X, params).data, direct.data)


class TestAttend:
    def test_single_position(self, rng):
        params = model.init_params(TINY_CONFIG, seed=0)
        H = Tensor(rng.standard_normal((1, 6)))
        context, weights = model.attend(H, np.zeros((1, 3)), params)
        np.testing.assert_allclose(weights.data, [[1.0]])
        np.testing.assert_allclose(context.data, H.data, atol=1e-12)

    def test_zero_scorer_gives_uniform_weights(self, rng):
        params = model.zeros_params(TINY_CONFIG)
        H = Tensor(rng.standard_normal((5, 6)))
        context, weights = model.attend(H, np.zeros((1, 3)), params)
        np.testing.assert_allclose(weights.data, np.full((1, 5), 0.2), atol=1e-12)
        np.testing.assert_allclose(context.data[0], H.data.mean(axis=0), atol=1e-12)

    def test_engineered_scores(self):
        # scores (0, ln 3) -> weights (0.25, 0.75)
        params = model.zeros_params(TINY_CONFIG)
        H = np.zeros((2, 6))
        H[1, 0] = 1.0
        w = np.zeros((9, 1))
        w[0, 0] = np.log(3.0)  # score_t = ln(3) * H[t, 0]
        params.attention_w = Tensor(w)
        context, weights = model.attend(Tensor(H), np.zeros((1, 3)), params)
        np.testing.assert_allclose(weights.data, [[0.25, 0.75]], atol=1e-12)
        np.testing.assert_allclose(context.data, 0.25 * H[:1] + 0.75 * H[1:2], atol=1e-12)

    def test_shared_scorer_equals_per_row_dense(self, rng):
        # the two matrix products equal dense([h_t ; h_prev]) applied per row
        params = model.init_params(TINY_CONFIG, seed=5)
        H = rng.standard_normal((5, 6))
        h_prev = rng.standard_normal((1, 3))
        _, weights = model.attend(Tensor(H), Tensor(h_prev), params)
        w = params.attention_w.data
        scores = np.array([
            np.concatenate([H[t], h_prev[0]]) @ w[:, 0] + params.attention_b.data[0]
            for t in range(5)
        ])
        expected = np.exp(scores - scores.max())
        expected /= expected.sum()
        np.testing.assert_allclose(weights.data[0], expected, atol=1e-12)


class TestDecode:
    def test_rows_are_distributions(self, rng):
        params = model.init_params(TINY_CONFIG, seed=1)
        H = model.encode(Tensor(rng.standard_normal((5, 3))), params)
        Y = model.decode(H, params)
        assert Y.shape == (3, 4)
        np.testing.assert_allclose(Y.data.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(Y.data > 0)

    def test_classifier_bias_only(self, rng):
        params = model.zeros_params(TINY_CONFIG)
        bias = np.array([0.1, -0.4, 1.2, 0.0])
        params.classifier_b = Tensor(bias)
        Y = model.decode(Tensor(rng.standard_normal((5, 6))), params)
        expected = np.exp(bias - bias.max())
        expected /= expected.sum()
        for row in Y.data:
            np.testing.assert_allclose(row, expected, atol=1e-12)

    def test_full_size_output_shape(self, rng):
        config = ModelConfig(n_feats=4, encoder_hidden=(2, 2, 3), decoder_hidden=(3, 6),
                             vocab_size=633, caption_steps=11, seq_len=6)
        params = model.init_params(config, seed=0)
        Y = model.decode(model.encode(Tensor(rng.standard_normal((6, 4))), params), params)
        assert Y.shape == (11, 633)

    def test_deterministic(self, rng):
        params = model.init_params(TINY_CONFIG, seed=9)
        X = rng.standard_normal((5, 3))
        a = model.decode(model.encode(Tensor(X), params), params).data
        b = model.decode(model.encode(Tensor(X), params), params).data
        assert np.array_equal(a, b)


class TestPredictCaption:
    def test_truncates_at_first_eos_and_length_bound(self, rng):
        from audiocap.data_prep import Vocabulary

        config = ModelConfig(n_feats=3, encoder_hidden=(2, 2, 3), decoder_hidden=(3, 6),
                             vocab_size=4, caption_steps=11, seq_len=5)
        vocab = Vocabulary(["dog", "bird", "rain"])
        for seed in range(10):
            params = model.init_params(config, seed=seed)
            caption = model.predict_caption(rng.standard_normal((5, 3)), params, vocab)
            assert len(caption) <= 11
            assert "<EOS>" not in caption

    def test_eos_peaked_bias_gives_empty_caption(self, rng):
        from audiocap.data_prep import Vocabulary

        vocab = Vocabulary(["dog", "bird", "rain"])
        params = model.zeros_params(TINY_CONFIG)
        params.classifier_b = Tensor(np.array([5.0, 0.0, 0.0, 0.0]))
        caption = model.predict_caption(rng.standard_normal((5, 3)), params, vocab)
        assert caption == []


class TestInitParams:
    def test_recurrent_matrices_orthogonal(self):
        params = model.init_params(TINY_CONFIG, seed=11)
        for name, tensor in params.named_tensors():
            if ".u_" in name:
                u = tensor.data
                np.testing.assert_allclose(u.T @ u, np.eye(u.shape[0]), atol=1e-9)

    def test_glorot_weights_within_bound(self):
        config = ModelConfig(seq_len=8, vocab_size=40, caption_steps=3)
        params = model.init_params(config, seed=2)
        for name, tensor in params.named_tensors():
            if ".w_" in name or name in ("attention.w", "classifier.w"):
                fan_in, fan_out = tensor.data.shape
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                assert np.all(np.abs(tensor.data) <= limit)

    def test_biases_zero(self):
        params = model.init_params(TINY_CONFIG, seed=4)
        for name, tensor in params.named_tensors():
            if ".b_" in name or name in ("attention.b", "classifier.b"):
                assert np.all(tensor.data == 0.0)

    def test_same_seed_bit_identical(self):
        a = model.init_params(TINY_CONFIG, seed=7)
        b = model.init_params(TINY_CONFIG, seed=7)
        for (_, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors()):
            assert np.array_equal(ta.data, tb.data)

    def test_different_seed_differs(self):
        a = model.init_params(TINY_CONFIG, seed=7)
        b = model.init_params(TINY_CONFIG, seed=8)
        assert any(
            not np.array_equal(ta.data, tb.data)
            for (_, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors())
        )


class TestCountParams:
    def test_hand_counted_gru_layer(self):
        # one direction, in=2, hid=3: 3 * (2*3 + 3*3 + 3) = 54
        p = GruLayerParams.zeros(2, 3)
        total = sum(t.data.size for _, t in p.named_tensors("x"))
        assert total == 54

    def test_dense_layer(self):
        config = ModelConfig(seq_len=4, vocab_size=1, caption_steps=1)
        # classifier with one output: 256 weights + 1 bias
        params = model.zeros_params(config)
        assert params.classifier_w.data.size + params.classifier_b.data.size == 257

    def test_count_matches_materialized_tensors(self):
        for config in (TINY_CONFIG, ModelConfig(seq_len=4, vocab_size=60, caption_steps=5)):
            params = model.zeros_params(config)
            materialized = sum(t.data.size for t in params.tensors())
            assert model.count_params(config) == materialized

    def test_full_configuration_total(self):
        # documented total under this layout; within 0.5% of 928,638
        total = model.count_params(ModelConfig())
        assert total == 927_610
        assert abs(total - 928_638) / 928_638 < 0.005


class TestModelInvariants:
    def test_attention_and_classifier_rows_sum_to_one(self, rng):
        for seed in range(25):
            params = model.init_params(TINY_CONFIG, seed=seed)
            X = rng.standard_normal((5, 3))
            Y, weights = model.decode(model.encode(Tensor(X), params), params,
                                      return_attention=True)
            for w in weights:
                assert abs(w.data.sum() - 1.0) <= 1e-9
                assert np.all(w.data >= 0)
            np.testing.assert_allclose(Y.data.sum(axis=1), 1.0, atol=1e-9)

    def test_full_model_gradient_check(self, rng):
        from audiocap.training import caption_loss

        params = model.init_params(TINY_CONFIG, seed=1)
        X = rng.standard_normal((5, 3))
        targets = np.array([1, 3, 0])

        def f():
            return caption_loss(X, targets, params)

        assert ng.gradient_check(f, params.tensors(), eps=1e-4) < 1e-4
