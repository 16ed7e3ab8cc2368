from .core import (
    Param,
    RegConfig,
    adam_step,
    cross_entropy,
    dropout_apply,
    grad_check,
    l1l2_penalty,
    sigmoid,
    silu,
    stable_softmax,
)
from .lstm import LstmGazeModel, lstm_backward, lstm_forward, lstm_param_count
from .transformer import (
    TransformerGazeModel,
    mha_forward,
    transformer_backward,
    transformer_forward,
    transformer_param_count,
)


def build_model(arch: str, n_classes: int, seed: int = 0):
    if arch == "lstm":
        return LstmGazeModel(n_classes, seed=seed)
    if arch == "transformer":
        return TransformerGazeModel(n_classes, seed=seed)
    raise ValueError(f"unknown architecture {arch!r}")
