from .checkpoint import load_checkpoint, save_checkpoint
from .layers import BLSTM, LSTM, Conv1d, Conv2d, Embedding, Linear, LSTMCell, Module
from .losses import CtcInfeasibleError, bce_loss, ce_loss, ctc_loss, l1_loss
from .optim import SGD, Adam, make_optimizer, sgd_step
from .tensor import (Parameter, ShapeError, Tensor, as_tensor, clamp, concat, constant, conv1d, conv2d,
                     embedding, exp, get_default_dtype, length_mask, log, log_softmax, lstm_sequence,
                     matmul, maxpool_time, no_grad, pad_time, permute_time, pooled_lengths, precision,
                     relu, reverse_within_lengths, sigmoid, softmax, stack, tanh)

__all__ = [
    "Adam", "BLSTM", "Conv1d", "Conv2d", "CtcInfeasibleError", "Embedding", "LSTM", "LSTMCell", "Linear",
    "Module", "Parameter", "SGD", "ShapeError", "Tensor", "as_tensor", "bce_loss", "ce_loss", "clamp",
    "concat", "constant", "conv1d", "conv2d", "ctc_loss", "embedding", "exp", "get_default_dtype",
    "l1_loss", "length_mask", "load_checkpoint", "log", "log_softmax", "lstm_sequence", "make_optimizer",
    "matmul", "maxpool_time", "no_grad", "pad_time", "permute_time", "pooled_lengths", "precision", "relu",
    "reverse_within_lengths", "save_checkpoint", "sgd_step", "sigmoid", "softmax", "stack", "tanh",
]
