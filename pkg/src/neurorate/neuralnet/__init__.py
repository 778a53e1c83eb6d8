"""From-scratch numpy networks: layers, peephole LSTM, and the regression models."""

from .layers import (
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    maxpool2x2_backward,
    maxpool2x2_forward,
    relu_backward,
    relu_forward,
)
from .lstm import init_lstm_params, lstm_backward, lstm_forward, lstm_step, lstm_step_backward
from .models import (
    CnnRegressorConfig,
    EncoderConfig,
    FullModelConfig,
    ModelBundle,
    NormStats,
    cnn_backward,
    cnn_forward,
    count_parameters,
    encoder_backward,
    encoder_forward,
    full_backward,
    full_forward,
    init_cnn_params,
    init_encoder_params,
    init_full_params,
    load_model,
    save_model,
)

__all__ = [
    "CnnRegressorConfig",
    "EncoderConfig",
    "FullModelConfig",
    "ModelBundle",
    "NormStats",
    "cnn_backward",
    "cnn_forward",
    "conv2d_backward",
    "conv2d_forward",
    "count_parameters",
    "dense_backward",
    "dense_forward",
    "dropout_backward",
    "dropout_forward",
    "encoder_backward",
    "encoder_forward",
    "full_backward",
    "full_forward",
    "init_cnn_params",
    "init_encoder_params",
    "init_full_params",
    "init_lstm_params",
    "load_model",
    "lstm_backward",
    "lstm_forward",
    "lstm_step",
    "lstm_step_backward",
    "maxpool2x2_backward",
    "maxpool2x2_forward",
    "relu_backward",
    "relu_forward",
    "save_model",
]
