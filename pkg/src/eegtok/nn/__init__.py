from .gradcheck import grad_check, relative_error
from .layers import Attention, Block, Conv1d, GroupNorm, LayerNorm, Linear, TemporalConv
from .model import (
    Batch,
    EncoderConfig,
    TokenizerModel,
    add_embeddings,
    load_model,
    save_model,
    time_indices,
)
