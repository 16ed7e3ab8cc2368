"""Deterministic double-precision numeric kernel shared by both classifiers:
activations, softmax/cross-entropy, dropout, L1/L2 penalties, Adam, and a
finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_LOG = 1e-12


@dataclass
class Param:
    """One trainable tensor with its gradient and Adam moments."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.m = np.zeros_like(self.value)
        self.v = np.zeros_like(self.value)

    @property
    def size(self) -> int:
        return self.value.size


@dataclass(frozen=True)
class RegConfig:
    l1: float = 1e-5
    l2: float = 1e-4
    applies_to: frozenset = frozenset()

    def __post_init__(self):
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError("regularization factors must be non-negative")


def stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("non-finite logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs: np.ndarray, target: int):
    """Loss and gradient w.r.t. the logits that produced `probs`."""
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= target < probs.shape[-1]:
        raise ValueError(f"target {target} out of range")
    loss = -np.log(probs[target] + EPS_LOG)
    dlogits = probs.copy()
    dlogits[target] -= 1.0
    return float(loss), dlogits


def cross_entropy_batch(probs: np.ndarray, targets: np.ndarray):
    """Mean loss over a batch and per-sample logit gradients (unscaled)."""
    n = probs.shape[0]
    picked = probs[np.arange(n), targets]
    loss = float(-np.log(picked + EPS_LOG).mean())
    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    return loss, dlogits


def grouped_cross_entropy(probs: np.ndarray, targets, inverse=None):
    """Mean cross-entropy when forward rows may be shared by several samples.

    `probs` holds one row per distinct input; `inverse` maps each sample to
    its row (identity when None). Returns the mean loss over samples and the
    logit gradient per distinct row, already scaled by 1/n_samples.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n = len(targets)
    if inverse is None:
        if len(probs) != n:
            raise ValueError("probs/targets length mismatch without inverse")
        loss, dlogits = cross_entropy_batch(probs, targets)
        dlogits /= n
        return loss, dlogits
    inverse = np.asarray(inverse, dtype=np.int64)
    picked = probs[inverse, targets]
    loss = float(-np.log(picked + EPS_LOG).mean())
    mult = np.bincount(inverse, minlength=len(probs)).astype(np.float64)
    counts = np.zeros_like(probs)
    np.add.at(counts, (inverse, targets), 1.0)
    dlogits = (probs * mult[:, None] - counts) / n
    return loss, dlogits


def sigmoid(x):
    # 0.5 * (1 + tanh(x/2)): numerically stable and faster than the
    # exp-based form for large arrays.
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid_grad(y):
    """Derivative given the sigmoid output y."""
    return y * (1.0 - y)


def tanh_grad(y):
    """Derivative given the tanh output y."""
    return 1.0 - y * y


def silu(x):
    return x * sigmoid(x)


def silu_grad(x, s=None):
    """Derivative of x*sigmoid(x); pass s=sigmoid(x) if already computed."""
    if s is None:
        s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def dropout_apply(x, rate: float, mode: str, rng=None):
    """Inverted dropout: train mode zeroes with probability `rate` and scales
    survivors by 1/(1-rate); eval mode is the identity.

    Returns (output, mask); the mask is None in eval mode or at rate 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if mode == "eval" or rate == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def l1l2_penalty(value: np.ndarray, l1: float, l2: float):
    """Penalty l1*sum|w| + l2*sum(w^2) and its gradient increment."""
    penalty = l1 * np.abs(value).sum() + l2 * np.square(value).sum()
    grad_inc = l1 * np.sign(value) + 2.0 * l2 * value
    return float(penalty), grad_inc


def adam_step(
    params,
    lr: float = 0.001,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
):
    """Bias-corrected Adam update over every Param; gradients are zeroed."""
    if t < 1:
        raise ValueError("step counter starts at 1")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for p in params:
        g = p.grad
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * np.square(g)
        m_hat = p.m / bc1
        v_hat = p.v / bc2
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad[...] = 0.0


def grad_check(
    loss_fn,
    params,
    step: float = 1e-5,
    samples_per_tensor: int = 200,
    seed: int = 0,
) -> float:
    """Compare analytic gradients against central differences.

    `loss_fn()` must deterministically recompute the loss and leave the
    analytic gradients in each Param's .grad. Samples up to
    `samples_per_tensor` coordinates per tensor (all if fewer) and returns
    the maximum relative error |a - n| / max(|a|, |n|, 1e-8).
    """
    rng = np.random.default_rng(seed)
    base_loss = loss_fn()
    if not np.isfinite(base_loss):
        raise ValueError("non-finite loss")
    analytic = {p.name: p.grad.copy() for p in params}
    max_err = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        if n <= samples_per_tensor:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples_per_tensor, replace=False)
        a_flat = analytic[p.name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up = loss_fn()
            flat[c] = orig - step
            down = loss_fn()
            flat[c] = orig
            numeric = (up - down) / (2.0 * step)
            a = a_flat[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_err = max(max_err, err)
    # restore analytic grads for the caller
    for p in params:
        p.grad[...] = analytic[p.name]
    return max_err


def assert_finite(name: str, *arrays) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite values in {name}")
