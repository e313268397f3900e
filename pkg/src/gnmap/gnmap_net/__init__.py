"""Shared autoencoder, two-phase training, and checkpointing."""

from .checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from .model import (
    CARRIED_PREFIXES,
    Block,
    DecoderConfig,
    EncoderConfig,
    FusionConfig,
    GeometryConfig,
    ModelParams,
    NetConfig,
    apply_blocks,
    decode,
    embed_patches,
    embed_tokens,
    encode,
    extract_tour_features,
    extractor_graph,
    fuse_forward,
    fuse_graph,
    pretrain_forward,
    pretrain_graph,
)
from .training import (
    DEFAULT_FINETUNE_STEPS,
    DEFAULT_LR,
    DEFAULT_PRETRAIN_STEPS,
    TrainConfig,
    TrainResult,
    finetune_run,
    fusion_ce,
    masked_completion_mse,
    pretrain_run,
    write_loss_curve,
)

__all__ = [
    "Block",
    "DEFAULT_FINETUNE_STEPS",
    "DEFAULT_LR",
    "DEFAULT_PRETRAIN_STEPS",
    "CARRIED_PREFIXES",
    "DecoderConfig",
    "EncoderConfig",
    "FusionConfig",
    "GeometryConfig",
    "ModelParams",
    "NetConfig",
    "TrainConfig",
    "TrainResult",
    "apply_blocks",
    "checkpoint_bytes",
    "decode",
    "embed_patches",
    "embed_tokens",
    "encode",
    "extract_tour_features",
    "extractor_graph",
    "finetune_run",
    "fuse_forward",
    "fuse_graph",
    "fusion_ce",
    "load_checkpoint",
    "masked_completion_mse",
    "pretrain_forward",
    "pretrain_graph",
    "pretrain_run",
    "save_checkpoint",
    "write_loss_curve",
]
