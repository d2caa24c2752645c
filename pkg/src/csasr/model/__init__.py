"""Transducer, NNLM, losses and training procedures."""
from .checkpoint import load_model, save_model
from .loss import (
    batch_loss,
    ilm_log_prob,
    joint_log_probs,
    lattice_loglik,
    nnlm_log_prob,
    transducer_loss,
)
from .networks import SIMPLE, STANDARD, LmConfig, NnlmModel, TransducerConfig, TransducerModel
from .training import (
    FINETUNE_LR,
    PRETRAIN_LR,
    MixedBatchSampler,
    MixRatioSchedule,
    TrainConfig,
    TrainingDivergedError,
    pseudo_label,
    sample_batch,
    ssl_pipeline,
    train,
    train_lm,
)
