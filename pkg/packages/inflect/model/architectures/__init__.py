from .encoder import (
    CLS_ID,
    FROZEN_ALL,
    FROZEN_BACKBONE,
    FULL,
    PAD_ID,
    SHALLOW,
    ForwardTrace,
    MiniEncoder,
    ModelConfig,
    count_total,
    count_trainable,
    set_strategy,
    trainable_blocks,
    trainable_mask,
)
