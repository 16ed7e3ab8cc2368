"""Bidirectional LSTM gaze classifier with a hand-written backward pass.

Stack: BiLSTM(32) over the full 30-step sequence -> BiLSTM(32) emitting only
its final forward/backward states (64 values, L1/L2 regularized kernels) ->
20% dropout -> dense(32, sigmoid) -> dense(n_classes, softmax).

Gate packing order inside every 4h block is (i, f, g, o).
"""

from __future__ import annotations

import numpy as np

from .core import (
    Param,
    RegConfig,
    assert_finite,
    dropout_apply,
    grouped_cross_entropy,
    l1l2_penalty,
    sigmoid,
    stable_softmax,
)

HIDDEN = 32
INPUT_DIM = 24
SEQ_LEN = 30
DROPOUT_RATE = 0.2


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal_stack(rng, h, n_blocks):
    """n_blocks stacked h x h orthogonal matrices -> (n_blocks*h, h)."""
    blocks = []
    for _ in range(n_blocks):
        a = rng.standard_normal((h, h))
        q, r = np.linalg.qr(a)
        q *= np.sign(np.diag(r))  # fix QR sign ambiguity for determinism
        blocks.append(q)
    return np.vstack(blocks)


class LstmCell:
    """One direction of one layer; parameters W (4h x d), U (4h x h), b."""

    def __init__(self, name: str, d: int, h: int, rng):
        self.d, self.h = d, h
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0  # forget-gate bias
        self.W = Param(f"{name}.W", _glorot(rng, (4 * h, d), d, 4 * h))
        self.U = Param(f"{name}.U", _orthogonal_stack(rng, h, 4))
        self.b = Param(f"{name}.b", b)

    @property
    def params(self):
        return [self.W, self.U, self.b]

    def step(self, x, h_prev, c_prev):
        """Single cell step; x (B,d), states (B,h). Returns (h, c)."""
        h = self.h
        z = x @ self.W.value.T + h_prev @ self.U.value.T + self.b.value
        i = sigmoid(z[:, :h])
        f = sigmoid(z[:, h : 2 * h])
        g = np.tanh(z[:, 2 * h : 3 * h])
        o = sigmoid(z[:, 3 * h :])
        c = f * c_prev + i * g
        h_new = o * np.tanh(c)
        return h_new, c

    def forward(self, X):
        """Run over X (B,T,d); returns H (B,T,h) and the gate cache.

        The input projection for all timesteps is a single matmul; only the
        recurrent projection stays inside the step loop.
        """
        B, T, _ = X.shape
        h = self.h
        Ut = self.U.value.T
        Zx = (X.reshape(B * T, self.d) @ self.W.value.T).reshape(B, T, 4 * h)
        Zx += self.b.value
        I = np.empty((B, T, h))
        F = np.empty((B, T, h))
        G = np.empty((B, T, h))
        O = np.empty((B, T, h))
        TC = np.empty((B, T, h))
        Cprev = np.empty((B, T, h))
        H = np.empty((B, T, h))
        h_t = np.zeros((B, h))
        c_t = np.zeros((B, h))
        for t in range(T):
            z = Zx[:, t] + h_t @ Ut
            s = sigmoid(z)
            i = s[:, :h]
            f = s[:, h : 2 * h]
            g = np.tanh(z[:, 2 * h : 3 * h])
            o = s[:, 3 * h :]
            Cprev[:, t] = c_t
            c_t = f * c_t + i * g
            tc = np.tanh(c_t)
            h_t = o * tc
            I[:, t] = i
            F[:, t] = f
            G[:, t] = g
            O[:, t] = o
            TC[:, t] = tc
            H[:, t] = h_t
        return H, (I, F, G, O, TC, Cprev)

    def backward(self, X, H, cache, dH):
        """BPTT given per-step output grads dH (B,T,h); returns dX.

        Per-step work is only the gate-local algebra and the recurrent
        matmul; all weight gradients are batched over time afterwards.
        """
        I, F, G, O, TC, Cprev = cache
        B, T, _ = X.shape
        h = self.h
        U = self.U.value
        dZ = np.empty((B, T, 4 * h))
        dh_carry = np.zeros((B, h))
        dc_carry = np.zeros((B, h))
        for t in range(T - 1, -1, -1):
            i, f, g, o = I[:, t], F[:, t], G[:, t], O[:, t]
            tc, c_prev = TC[:, t], Cprev[:, t]
            dh = dH[:, t] + dh_carry
            dc = dh * o * (1.0 - tc * tc) + dc_carry
            dz = dZ[:, t]
            dz[:, :h] = dc * g * i * (1.0 - i)
            dz[:, h : 2 * h] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * h : 3 * h] = dc * i * (1.0 - g * g)
            dz[:, 3 * h :] = dh * tc * o * (1.0 - o)
            dc_carry = dc * f
            dh_carry = dz @ U
        dZ2 = dZ.reshape(B * T, 4 * h)
        self.W.grad += dZ2.T @ X.reshape(B * T, self.d)
        Hprev = np.empty_like(H)
        Hprev[:, 0] = 0.0
        Hprev[:, 1:] = H[:, :-1]
        self.U.grad += dZ2.T @ Hprev.reshape(B * T, h)
        self.b.grad += dZ2.sum(axis=0)
        return (dZ2 @ self.W.value).reshape(B, T, self.d)


class LstmGazeModel:
    arch = "lstm"

    def __init__(self, n_classes: int, seed: int = 0, reg: RegConfig | None = None):
        if n_classes not in (6, 7):
            raise ValueError("n_classes must be 6 or 7")
        self.n_classes = n_classes
        rng = np.random.default_rng(seed)
        h = HIDDEN
        self.l1f = LstmCell("lstm1.fwd", INPUT_DIM, h, rng)
        self.l1b = LstmCell("lstm1.bwd", INPUT_DIM, h, rng)
        self.l2f = LstmCell("lstm2.fwd", 2 * h, h, rng)
        self.l2b = LstmCell("lstm2.bwd", 2 * h, h, rng)
        self.Wd = Param("dense.W", _glorot(rng, (h, 2 * h), 2 * h, h))
        self.bd = Param("dense.b", np.zeros(h))
        self.Wo = Param("head.W", _glorot(rng, (n_classes, h), h, n_classes))
        self.bo = Param("head.b", np.zeros(n_classes))
        if reg is None:
            reg = RegConfig(
                applies_to=frozenset(
                    {"lstm2.fwd.W", "lstm2.fwd.U", "lstm2.bwd.W", "lstm2.bwd.U"}
                )
            )
        self.reg = reg
        expected = 41702 if n_classes == 6 else 41735
        if self.param_count() != expected:
            raise AssertionError(
                f"parameter count {self.param_count()} != expected {expected}"
            )

    @property
    def params(self):
        return (
            self.l1f.params
            + self.l1b.params
            + self.l2f.params
            + self.l2b.params
            + [self.Wd, self.bd, self.Wo, self.bo]
        )

    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def layer1_forward(self, X):
        """Bidirectional sequence output (B,T,64) plus internals."""
        Hf, cf = self.l1f.forward(X)
        Xr = X[:, ::-1]
        Hbr, cb = self.l1b.forward(Xr)
        S = np.concatenate([Hf, Hbr[:, ::-1]], axis=2)
        return S, (Hf, cf, Xr, Hbr, cb)

    def _forward(self, X, mode, rng):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
        S, l1_cache = self.layer1_forward(X)
        H2f, c2f = self.l2f.forward(S)
        Sr = S[:, ::-1]
        H2b, c2b = self.l2b.forward(Sr)
        u = np.concatenate([H2f[:, -1], H2b[:, -1]], axis=1)  # (B, 64)
        u_drop, mask = dropout_apply(u, DROPOUT_RATE, mode, rng)
        hid = sigmoid(u_drop @ self.Wd.value.T + self.bd.value)
        logits = hid @ self.Wo.value.T + self.bo.value
        probs = stable_softmax(logits, axis=1)
        cache = (X, S, l1_cache, H2f, c2f, Sr, H2b, c2b, u_drop, mask, hid, probs, single)
        return probs, cache

    def forward_batch(self, X, mode: str = "eval", rng=None):
        probs, cache = self._forward(X, mode, rng)
        assert_finite("lstm forward", probs)
        return probs[0] if cache[-1] else probs

    def loss_and_grads(self, X, y, mode: str = "train", rng=None, inverse=None):
        """Mean cross-entropy (+ L1/L2 penalty) and gradients in .grad.

        With `inverse`, X holds one row per distinct window and inverse maps
        each target in y to its window row; gradients are the exact sums over
        the duplicated samples.
        """
        for p in self.params:
            p.grad[...] = 0.0
        probs, cache = self._forward(X, mode, rng)
        (X, S, l1_cache, H2f, c2f, Sr, H2b, c2b, u_drop, mask, hid, probs, single) = cache
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
        loss, dlogits = grouped_cross_entropy(probs, y, inverse)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss")

        self.Wo.grad += dlogits.T @ hid
        self.bo.grad += dlogits.sum(axis=0)
        dhid = dlogits @ self.Wo.value
        dpre = dhid * hid * (1.0 - hid)
        self.Wd.grad += dpre.T @ u_drop
        self.bd.grad += dpre.sum(axis=0)
        du = dpre @ self.Wd.value
        if mask is not None:
            du = du * mask

        h = HIDDEN
        T = X.shape[1]
        dH2f = np.zeros_like(H2f)
        dH2f[:, -1] = du[:, :h]
        dH2b = np.zeros_like(H2b)
        dH2b[:, -1] = du[:, h:]
        dS = self.l2f.backward(S, H2f, c2f, dH2f)
        dS = dS + self.l2b.backward(Sr, H2b, c2b, dH2b)[:, ::-1]

        Hf, cf, Xr, Hbr, cb = l1_cache
        dX = self.l1f.backward(X, Hf, cf, dS[:, :, :h])
        dX += self.l1b.backward(Xr, Hbr, cb, dS[:, ::-1, h:])[:, ::-1]

        for cell in (self.l2f, self.l2b):
            for p in (cell.W, cell.U):
                if p.name in self.reg.applies_to:
                    penalty, grad_inc = l1l2_penalty(p.value, self.reg.l1, self.reg.l2)
                    loss += penalty
                    p.grad += grad_inc
        return loss


def lstm_forward(model: LstmGazeModel, window, mode: str = "eval", seed: int = 0):
    rng = np.random.default_rng(seed) if mode == "train" else None
    return model.forward_batch(window, mode, rng)


def lstm_backward(model: LstmGazeModel, window, target: int, mode: str = "eval", seed: int = 0):
    rng = np.random.default_rng(seed) if mode == "train" else None
    loss = model.loss_and_grads(np.asarray(window)[None], [target], mode, rng)
    return loss, {p.name: p.grad.copy() for p in model.params}


def lstm_param_count(model: LstmGazeModel) -> int:
    return model.param_count()
