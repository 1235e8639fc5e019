"""Minimal differentiable core: autodiff tape, layers, optimiser, checkpoints."""

from .autodiff import Tensor, backward, constant, value_and_grad
from .checkpoint import fingerprint, load_checkpoint, save_checkpoint
from .layers import (EncoderConfig, attn_encode, cross_entropy, encoder_shapes, gru_forward,
                     gru_shapes, init_params, mlm_logits, stacked_gru)
from .optim import AdamState, adam_step, clip_by_global_norm, finite_diff_check
