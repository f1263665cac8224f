"""Model assembly: configuration, positional encodings, the masked
autoencoder itself, analytic cost models, and checkpoints."""

from .analytic import (
    VIT_BASE,
    VIT_LARGE,
    count_params,
    flops_estimate,
    mamba_block_params,
    vit_block_params,
    vit_reference_params,
)
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    params_from_checkpoint,
    params_to_arrays,
    save_checkpoint,
)
from .config import ConfigError, ModelConfig, desk_config, satmamba_base
from .network import (
    ModelParams,
    decode,
    encode,
    forward_loss,
    init_model,
    mae_loss,
    multiway_layer_forward,
    normalized_patch_target,
)
from .posenc import positional_encoding

__all__ = [
    "ModelConfig", "ConfigError", "desk_config", "satmamba_base",
    "ModelParams", "init_model", "encode", "decode", "mae_loss",
    "forward_loss", "multiway_layer_forward", "normalized_patch_target",
    "positional_encoding", "count_params", "flops_estimate",
    "mamba_block_params", "vit_block_params", "vit_reference_params",
    "VIT_BASE", "VIT_LARGE", "Checkpoint", "CheckpointError",
    "save_checkpoint", "load_checkpoint", "params_to_arrays",
    "params_from_checkpoint",
]
