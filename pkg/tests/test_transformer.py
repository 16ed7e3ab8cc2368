"""Transformer encoder classifier: attention contracts, layer norm, pooling,
parameter accounting, backward correctness."""

import numpy as np
import pytest

from gazeseq.nn.core import adam_step, grad_check
from gazeseq.nn.transformer import (
    EncoderBlock,
    TransformerGazeModel,
    layer_norm_backward,
    layer_norm_forward,
    mha_forward,
    sinusoidal_positions,
    transformer_forward,
    transformer_param_count,
)


def random_window(seed=0, shape=(30, 24)):
    return np.random.default_rng(seed).integers(0, 2, size=shape).astype(float)


class TestParamCount:
    def test_class_delta_is_25(self):
        c6 = TransformerGazeModel(6).param_count()
        c7 = TransformerGazeModel(7).param_count()
        assert c7 - c6 == 25

    def test_per_block_count(self):
        block = EncoderBlock("b", np.random.default_rng(0))
        assert sum(p.size for p in block.params) == 52696

    def test_total_with_decided_layout(self):
        # Documented total of the decided architecture; the cross-scenario
        # delta of 25 is the hard constraint, the absolute total is reported.
        assert transformer_param_count(TransformerGazeModel(6)) == 105542
        assert TransformerGazeModel(7).param_count() == 105567

    def test_bad_class_count(self):
        with pytest.raises(ValueError):
            TransformerGazeModel(9)


class TestPositions:
    def test_shape_and_range(self):
        table = sinusoidal_positions()
        assert table.shape == (30, 24)
        assert np.all(np.abs(table) <= 1.0)

    def test_first_row(self):
        table = sinusoidal_positions()
        assert np.allclose(table[0, 0::2], 0.0)
        assert np.allclose(table[0, 1::2], 1.0)


class TestLayerNorm:
    def test_normalization(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 24)) * 3 + 2
        out, (xhat, _) = layer_norm_forward(x, np.ones(24), np.zeros(24))
        assert np.allclose(xhat.mean(axis=-1), 0.0, atol=1e-8)
        assert np.allclose(xhat.var(axis=-1), 1.0, atol=1e-8)
        assert np.allclose(out, xhat)

    def test_backward_finite_difference(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((3, 8))
        gain = rng.standard_normal(8)
        bias = rng.standard_normal(8)
        w = rng.standard_normal((3, 8))

        def loss(xv):
            out, _ = layer_norm_forward(xv, gain, bias)
            return float((out * w).sum())

        _, cache = layer_norm_forward(x, gain, bias)
        dx, _, _ = layer_norm_backward(w, gain, cache)
        h = 1e-6
        for i in range(3):
            for j in range(8):
                xp = x.copy(); xp[i, j] += h
                xm = x.copy(); xm[i, j] -= h
                numeric = (loss(xp) - loss(xm)) / (2 * h)
                assert dx[i, j] == pytest.approx(numeric, rel=1e-4, abs=1e-8)


class TestAttention:
    def test_rows_are_probabilities(self):
        block = EncoderBlock("b", np.random.default_rng(0))
        _, attn = mha_forward(block, random_window())
        assert attn.shape == (4, 30, 30)
        assert np.allclose(attn.sum(axis=-1), 1.0, atol=1e-12)

    def test_constant_input_uniform_attention(self):
        block = EncoderBlock("b", np.random.default_rng(0))
        X = np.tile(np.random.default_rng(1).random(24), (30, 1))
        out, attn = mha_forward(block, X)
        assert np.allclose(attn, 1.0 / 30.0, atol=1e-12)
        assert np.allclose(out, out[0], atol=1e-10)

    def test_permutation_equivariance(self):
        block = EncoderBlock("b", np.random.default_rng(0))
        X = random_window(2)
        perm = np.random.default_rng(3).permutation(30)
        out, _ = mha_forward(block, X)
        out_p, _ = mha_forward(block, X[perm])
        assert np.allclose(out_p, out[perm], atol=1e-10)


class TestForward:
    def test_probability_vector(self):
        model = TransformerGazeModel(7, seed=0)
        probs = transformer_forward(model, random_window())
        assert probs.shape == (7,)
        assert abs(probs.sum() - 1.0) <= 1e-12

    def test_positions_break_equivariance(self):
        model = TransformerGazeModel(6, seed=0)
        w = random_window(5)
        permuted = w[::-1].copy()
        assert not np.allclose(transformer_forward(model, w),
                               transformer_forward(model, permuted))

    def test_without_positions_pooled_output_permutation_invariant(self):
        # Max-pool over time makes the whole net permutation-invariant once
        # the positional table is disabled.
        model = TransformerGazeModel(6, seed=0, use_positions=False)
        w = random_window(5)
        perm = np.random.default_rng(1).permutation(30)
        assert np.allclose(transformer_forward(model, w),
                           transformer_forward(model, w[perm]), atol=1e-10)

    def test_maxpool_sensitivity(self):
        model = TransformerGazeModel(6, seed=0)
        a = random_window(6)
        b = a.copy()
        b[29] = 1.0 - b[29]
        assert not np.allclose(transformer_forward(model, a),
                               transformer_forward(model, b))

    def test_maxpool_dominance(self):
        rng = np.random.default_rng(0)
        H = rng.standard_normal((30, 24))
        pooled = H.max(axis=0)
        H2 = H.copy()
        H2[7] = H[7] + np.abs(rng.standard_normal(24)) + 0.1
        assert np.all(H2.max(axis=0) >= pooled)

    def test_eval_bitwise_repeatable(self):
        model = TransformerGazeModel(6, seed=4)
        w = random_window(7)
        first = transformer_forward(model, w).tobytes()
        for _ in range(100):
            assert transformer_forward(model, w).tobytes() == first


class TestBackward:
    def test_grad_check(self):
        model = TransformerGazeModel(6, seed=0)
        w = random_window(1)

        def loss_fn():
            return model.loss_and_grads(w[None], [3], mode="eval")

        err = grad_check(loss_fn, model.params, samples_per_tensor=4, seed=0)
        assert err < 1e-4

    def test_pool_routing_is_sparse(self):
        model = TransformerGazeModel(6, seed=0)
        probs, cache = model._forward(random_window(2)[None], "eval", None)
        H, _, pool_idx, pooled, _, _ = cache
        assert np.array_equal(pooled, H.max(axis=1))
        # The winner index must reproduce the pooled value exactly; every
        # other time step gets a zero local gradient from the pool.
        for dcol in range(24):
            assert H[0, pool_idx[0, dcol], dcol] == pooled[0, dcol]

    def test_key_bias_gradient_is_zero(self):
        # The key-projection bias cancels inside the row softmax, so its
        # gradient is identically zero and it never moves from init.
        model = TransformerGazeModel(6, seed=0)
        model.loss_and_grads(random_window(3)[None], [1], mode="eval")
        for blk in model.blocks:
            assert np.all(blk.bk.grad == 0.0)
            assert np.all(blk.bk.value == 0.0)

    def test_overfit_single_sample(self):
        model = TransformerGazeModel(6, seed=0)
        w = random_window(9)[None]
        losses = []
        for t in range(1, 51):
            losses.append(model.loss_and_grads(w, [4], mode="eval"))
            adam_step(model.params, lr=0.001, t=t)
        assert losses[-1] < losses[0]
        assert losses[-1] < 0.5


class TestHeadInvariance:
    def test_argmax_invariant_to_logit_shift(self):
        model = TransformerGazeModel(6, seed=0)
        w = random_window(11)
        base = transformer_forward(model, w)
        model.bh.value[...] += 5.0
        shifted = transformer_forward(model, w)
        assert int(base.argmax()) == int(shifted.argmax())
        assert np.allclose(base, shifted, atol=1e-12)
