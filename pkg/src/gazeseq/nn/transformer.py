"""Transformer encoder gaze classifier with a hand-written backward pass.

Stack: fixed sinusoidal positions added to the 30x24 window, two post-norm
encoder blocks (4-head self-attention, 1024-unit SiLU feed-forward), global
max-pool over time, dense softmax head. Model width equals the 24 input
features; no input projection.
"""

from __future__ import annotations

import numpy as np

from .core import (
    Param,
    assert_finite,
    grouped_cross_entropy,
    sigmoid,
    silu_grad,
    stable_softmax,
)

MODEL_DIM = 24
SEQ_LEN = 30
N_HEADS = 4
HEAD_DIM = MODEL_DIM // N_HEADS
FFN_DIM = 1024
LN_EPS = 1e-12


def sinusoidal_positions(seq_len: int = SEQ_LEN, dim: int = MODEL_DIM) -> np.ndarray:
    """Classic fixed sin/cos positional table (seq_len x dim)."""
    pos = np.arange(seq_len)[:, None]
    i = np.arange(dim // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    table = np.empty((seq_len, dim))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def layer_norm_forward(x, gain, bias):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def layer_norm_backward(dy, gain, cache):
    xhat, inv = cache
    dgain = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbias = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgain, dbias


class EncoderBlock:
    def __init__(self, name: str, rng):
        d, f = MODEL_DIM, FFN_DIM
        self.Wq = Param(f"{name}.Wq", _glorot(rng, (d, d), d, d))
        self.bq = Param(f"{name}.bq", np.zeros(d))
        self.Wk = Param(f"{name}.Wk", _glorot(rng, (d, d), d, d))
        self.bk = Param(f"{name}.bk", np.zeros(d))
        self.Wv = Param(f"{name}.Wv", _glorot(rng, (d, d), d, d))
        self.bv = Param(f"{name}.bv", np.zeros(d))
        self.Wo = Param(f"{name}.Wo", _glorot(rng, (d, d), d, d))
        self.bo = Param(f"{name}.bo", np.zeros(d))
        self.ln1_g = Param(f"{name}.ln1.g", np.ones(d))
        self.ln1_b = Param(f"{name}.ln1.b", np.zeros(d))
        self.ln2_g = Param(f"{name}.ln2.g", np.ones(d))
        self.ln2_b = Param(f"{name}.ln2.b", np.zeros(d))
        self.W1 = Param(f"{name}.ffn.W1", _glorot(rng, (d, f), d, f))
        self.b1 = Param(f"{name}.ffn.b1", np.zeros(f))
        self.W2 = Param(f"{name}.ffn.W2", _glorot(rng, (f, d), f, d))
        self.b2 = Param(f"{name}.ffn.b2", np.zeros(d))

    @property
    def params(self):
        return [
            self.Wq, self.bq, self.Wk, self.bk, self.Wv, self.bv,
            self.Wo, self.bo, self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
            self.W1, self.b1, self.W2, self.b2,
        ]

    @staticmethod
    def _split_heads(x):
        # (B,T,d) -> (B,heads,T,head_dim)
        B, T, _ = x.shape
        return x.reshape(B, T, N_HEADS, HEAD_DIM).transpose(0, 2, 1, 3)

    @staticmethod
    def _merge_heads(x):
        B, H, T, Dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, T, H * Dh)

    def attention(self, X):
        Q = self._split_heads(X @ self.Wq.value + self.bq.value)
        # The key bias adds q_i . bk to every score in row i, which the row
        # softmax cancels exactly, so it is left out of the computation; its
        # gradient is identically zero and the parameter stays at its init.
        K = self._split_heads(X @ self.Wk.value)
        V = self._split_heads(X @ self.Wv.value + self.bv.value)
        scores = Q @ K.transpose(0, 1, 3, 2) / np.sqrt(HEAD_DIM)
        attn = stable_softmax(scores, axis=-1)
        ctx = self._merge_heads(attn @ V)
        out = ctx @ self.Wo.value + self.bo.value
        return out, (X, Q, K, V, attn, ctx)

    def forward(self, X):
        att, att_cache = self.attention(X)
        Y, ln1_cache = layer_norm_forward(X + att, self.ln1_g.value, self.ln1_b.value)
        Z1 = Y @ self.W1.value + self.b1.value
        S = sigmoid(Z1)
        A = Z1 * S
        F = A @ self.W2.value + self.b2.value
        out, ln2_cache = layer_norm_forward(Y + F, self.ln2_g.value, self.ln2_b.value)
        return out, (att_cache, ln1_cache, Y, Z1, S, A, ln2_cache)

    def backward(self, dout, cache):
        att_cache, ln1_cache, Y, Z1, S, A, ln2_cache = cache
        dres2, dg2, db2 = layer_norm_backward(dout, self.ln2_g.value, ln2_cache)
        self.ln2_g.grad += dg2
        self.ln2_b.grad += db2
        dY = dres2.copy()
        dF = dres2
        self.W2.grad += A.reshape(-1, FFN_DIM).T @ dF.reshape(-1, MODEL_DIM)
        self.b2.grad += dF.sum(axis=(0, 1))
        dA = dF @ self.W2.value.T
        dZ1 = dA * silu_grad(Z1, S)
        self.W1.grad += Y.reshape(-1, MODEL_DIM).T @ dZ1.reshape(-1, FFN_DIM)
        self.b1.grad += dZ1.sum(axis=(0, 1))
        dY += dZ1 @ self.W1.value.T

        dres1, dg1, db1 = layer_norm_backward(dY, self.ln1_g.value, ln1_cache)
        self.ln1_g.grad += dg1
        self.ln1_b.grad += db1
        dX = dres1.copy()
        datt = dres1

        X, Q, K, V, attn, ctx = att_cache
        self.Wo.grad += ctx.reshape(-1, MODEL_DIM).T @ datt.reshape(-1, MODEL_DIM)
        self.bo.grad += datt.sum(axis=(0, 1))
        dctx = self._split_heads(datt @ self.Wo.value.T)
        dattn = dctx @ V.transpose(0, 1, 3, 2)
        dV = attn.transpose(0, 1, 3, 2) @ dctx
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dscores /= np.sqrt(HEAD_DIM)
        dQ = dscores @ K
        dK = dscores.transpose(0, 1, 3, 2) @ Q
        for dproj, W, b in (
            (dQ, self.Wq, self.bq),
            (dK, self.Wk, None),  # key bias cancels in softmax, zero grad
            (dV, self.Wv, self.bv),
        ):
            dflat = self._merge_heads(dproj)
            W.grad += X.reshape(-1, MODEL_DIM).T @ dflat.reshape(-1, MODEL_DIM)
            if b is not None:
                b.grad += dflat.sum(axis=(0, 1))
            dX += dflat @ W.value.T
        return dX


class TransformerGazeModel:
    arch = "transformer"

    def __init__(self, n_classes: int, seed: int = 0, use_positions: bool = True):
        if n_classes not in (6, 7):
            raise ValueError("n_classes must be 6 or 7")
        self.n_classes = n_classes
        self.use_positions = use_positions
        self.positions = sinusoidal_positions()
        rng = np.random.default_rng(seed)
        self.blocks = [EncoderBlock("enc1", rng), EncoderBlock("enc2", rng)]
        d = MODEL_DIM
        self.Wh = Param("head.W", _glorot(rng, (n_classes, d), d, n_classes))
        self.bh = Param("head.b", np.zeros(n_classes))

    @property
    def params(self):
        out = []
        for blk in self.blocks:
            out.extend(blk.params)
        out.extend([self.Wh, self.bh])
        return out

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def _forward(self, X, mode, rng):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
        H = X + self.positions if self.use_positions else X.copy()
        block_caches = []
        for blk in self.blocks:
            H, cache = blk.forward(H)
            block_caches.append(cache)
        pool_idx = H.argmax(axis=1)  # (B, d); ties go to the earliest step
        pooled = H.max(axis=1)
        logits = pooled @ self.Wh.value.T + self.bh.value
        probs = stable_softmax(logits, axis=1)
        return probs, (H, block_caches, pool_idx, pooled, probs, single)

    def forward_batch(self, X, mode: str = "eval", rng=None):
        probs, cache = self._forward(X, mode, rng)
        assert_finite("transformer forward", probs)
        return probs[0] if cache[-1] else probs

    def loss_and_grads(self, X, y, mode: str = "train", rng=None, inverse=None):
        """With `inverse`, X holds one row per distinct window and inverse maps
        each target in y to its window row; gradients are the exact sums over
        the duplicated samples."""
        for p in self.params:
            p.grad[...] = 0.0
        probs, cache = self._forward(X, mode, rng)
        H, block_caches, pool_idx, pooled, probs, single = cache
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
        B, d = pooled.shape
        loss, dlogits = grouped_cross_entropy(probs, y, inverse)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss")

        self.Wh.grad += dlogits.T @ pooled
        self.bh.grad += dlogits.sum(axis=0)
        dpooled = dlogits @ self.Wh.value

        dH = np.zeros_like(H)
        b_idx = np.repeat(np.arange(B), d)
        d_idx = np.tile(np.arange(d), B)
        dH[b_idx, pool_idx.reshape(-1), d_idx] = dpooled.reshape(-1)

        for blk, blk_cache in zip(reversed(self.blocks), reversed(block_caches)):
            dH = blk.backward(dH, blk_cache)
        return loss


def mha_forward(block: EncoderBlock, X):
    """Multi-head self-attention output for X (T x d or B x T x d)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    out, cache = block.attention(X)
    attn = cache[4]
    return (out[0], attn[0]) if single else (out, attn)


def transformer_forward(model: TransformerGazeModel, window, mode: str = "eval", seed: int = 0):
    rng = np.random.default_rng(seed) if mode == "train" else None
    return model.forward_batch(window, mode, rng)


def transformer_backward(
    model: TransformerGazeModel, window, target: int, mode: str = "eval", seed: int = 0
):
    rng = np.random.default_rng(seed) if mode == "train" else None
    loss = model.loss_and_grads(np.asarray(window)[None], [target], mode, rng)
    return loss, {p.name: p.grad.copy() for p in model.params}


def transformer_param_count(model: TransformerGazeModel) -> int:
    count = model.param_count()
    # The 7-class head must cost exactly 25 parameters more than the 6-class
    # head: this pins the classifier input width to 24.
    assert (
        TransformerGazeModel(7).param_count()
        - TransformerGazeModel(6).param_count()
        == 25
    )
    return count
