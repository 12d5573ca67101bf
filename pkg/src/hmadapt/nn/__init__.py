"""From-scratch residual classifier, Adam and the training loop."""

from .layers import cross_entropy, softmax
from .model import (HEAD_PARAMS, NetConfig, NetParams, backward, backward_from, block_param_names,
                    features, forward, init_params, loss_and_grads, predict_proba)
from .optim import AdamState, adam_step
from .train import TrainConfig, TrainResult, run_epochs, train

__all__ = [
    "cross_entropy", "softmax",
    "HEAD_PARAMS", "NetConfig", "NetParams", "backward", "backward_from", "block_param_names",
    "features", "forward", "init_params", "loss_and_grads", "predict_proba",
    "AdamState", "adam_step", "TrainConfig", "TrainResult", "run_epochs", "train",
]
