"""From-scratch network numerics: embedding, dropout, BiLSTM, head, Adam.

The sequential recurrence runs on a compiled kernel when the extension built,
with a numpy fallback selected at import (see kernels.active_backend).
"""

from .adam import AdamState, adam_step
from .kernels import active_backend, available_backends, set_backend
from .model import (
    EncodedBatch,
    bce_loss,
    bilstm_forward,
    backward_batch,
    embed,
    forward_batch,
    head_forward,
    lstm_step,
    sample_dropout_masks,
    spatial_dropout,
)
from .params import DropoutConfig, ModelDims, ModelParams, init_params
