"""Decision Transformer: model, training, control rollout, size metrics."""

from .model import (DEFAULT_CONTEXT, DEFAULT_MAX_TIMESTEP, SIZES, DecisionTransformer, DTConfig,
                    attention_block_mask, build_model, closed_form_params, forward)
from .policy import (DTPolicy, act, activation_bytes, count_params, default_target, memory_estimate,
                     time_inference)
from .train import (Standardizer, TrainConfig, TrainResult, WindowSet, canonical_order, dt_checkpoint_bytes,
                    dt_from_bytes, evaluate_loss, load_dt, masked_mse, save_dt, train_dt, train_meta)

__all__ = [
    "DEFAULT_CONTEXT", "DEFAULT_MAX_TIMESTEP", "SIZES", "DecisionTransformer", "DTConfig", "attention_block_mask",
    "build_model", "closed_form_params", "forward", "DTPolicy", "act", "activation_bytes", "count_params",
    "default_target", "memory_estimate", "time_inference", "Standardizer", "TrainConfig", "TrainResult",
    "WindowSet", "canonical_order", "dt_checkpoint_bytes", "dt_from_bytes", "evaluate_loss", "load_dt",
    "masked_mse", "save_dt", "train_dt", "train_meta",
]
