from .losses import gacl_loss, gacl_loss_grad, infonce_loss, loss_and_grads
from .model import AlignmentModel, EmbeddingPair, ProjectionHead, cosine_matrix, encode
from .optim import AdamW
from .train import AlignData, TrainConfig, TrainLog, train, train_from_splits
from .tune import random_search, tune

__all__ = [
    "AdamW",
    "AlignData",
    "AlignmentModel",
    "EmbeddingPair",
    "ProjectionHead",
    "TrainConfig",
    "TrainLog",
    "cosine_matrix",
    "encode",
    "gacl_loss",
    "gacl_loss_grad",
    "infonce_loss",
    "loss_and_grads",
    "random_search",
    "train",
    "train_from_splits",
    "tune",
]
