"""Network layers, GRU, model graph and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gru import GruState, gru_backward, gru_forward
from .layers import (conv2d_backward, conv2d_forward, conv3d_backward, conv3d_forward, dense_backward,
                     dense_forward, maxpool2d_backward, maxpool2d_forward, softmax)
from .model import ModelConfig, backward, forward, init_params, model_forward, param_shapes, predict
