"""Small numpy neural-network engine: LSTM and CNN classifiers with exact gradients."""

from hsiband.nn.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from hsiband.nn.cnn import CnnClassifier, cnn_forward
from hsiband.nn.layers import conv2d_forward, maxpool2, softmax, softmax_cross_entropy
from hsiband.nn.lstm import LstmClassifier, lstm_cell_forward, lstm_classify_forward
from hsiband.nn.optim import AdamState, adam_step
from hsiband.nn.train import (
    LossCurve,
    TrainConfig,
    TrainingDiverged,
    TrainResult,
    accuracy,
    predict,
    train_classifier,
)


def grad(model, params, x, y, weight_decay: float = 0.0):
    """Analytic gradient of the mean cross-entropy (plus optional L2 penalty)."""
    return model.loss_and_grad(params, x, y, weight_decay)[1]


__all__ = [
    "AdamState",
    "CnnClassifier",
    "LossCurve",
    "LstmClassifier",
    "TrainConfig",
    "TrainResult",
    "TrainingDiverged",
    "accuracy",
    "adam_step",
    "checkpoint_bytes",
    "cnn_forward",
    "conv2d_forward",
    "grad",
    "load_checkpoint",
    "lstm_cell_forward",
    "lstm_classify_forward",
    "maxpool2",
    "predict",
    "save_checkpoint",
    "softmax",
    "softmax_cross_entropy",
    "train_classifier",
]
