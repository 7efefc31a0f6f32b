"""Word-prediction model: architectures, losses, training, checkpoints."""

from .attention import scaled_dot_attention, scaled_dot_attention_backward
from .checkpoint import (
    CheckpointError,
    CheckpointManifestError,
    CheckpointPayloadError,
    CheckpointVersionError,
    load_predictor,
    load_pretrained_excluding_embeddings,
    read_checkpoint_manifest,
    save_predictor,
)
from .losses import ce_clamp_counter, ce_loss, nce_loss, neg_loss
from .model import (
    EMBEDDING_TENSORS,
    PredictorConfig,
    PredictorParams,
    QEFVSequence,
    build_predictor,
    extract_qefv,
    forward_states,
    predict_token_distribution,
    verify_vocabs,
)
from .training import EpochLog, train_predictor, validate_predictor

__all__ = [
    "CheckpointError",
    "CheckpointManifestError",
    "CheckpointPayloadError",
    "CheckpointVersionError",
    "EMBEDDING_TENSORS",
    "EpochLog",
    "PredictorConfig",
    "PredictorParams",
    "QEFVSequence",
    "build_predictor",
    "ce_clamp_counter",
    "ce_loss",
    "extract_qefv",
    "forward_states",
    "load_predictor",
    "load_pretrained_excluding_embeddings",
    "nce_loss",
    "neg_loss",
    "predict_token_distribution",
    "read_checkpoint_manifest",
    "save_predictor",
    "scaled_dot_attention",
    "scaled_dot_attention_backward",
    "train_predictor",
    "validate_predictor",
    "verify_vocabs",
]
