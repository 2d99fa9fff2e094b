"""Source-free unsupervised domain adaptation.

Given a pretrained source classifier (feature generator + head) and unlabeled
target samples, the adaptation loop freezes the head and retrains the
generator with augmentation-consistency losses, in-batch prototype
pseudo-labels, entropy minimization, and an optional MC-dropout uncertainty
penalty.
"""

__version__ = "0.1.0"

from .adapt import AdaptConfig, AdaptResult, adapt_run, adapt_step, evaluate, run_grid
from .augment import AugPolicy, ViewBatch, make_views, strong_transform, weak_transform
from .data import Dataset, make_blobs_pair, make_tiny_digits_pair, make_two_moons_pair
from .estimators import DomainAdapter, SourceNetClassifier
from .losses import (
    LossReport,
    class_prototypes,
    combine_losses,
    cosine_dissimilarity,
    entropy_loss,
    epistemic_loss,
    inter_consistency_loss,
    intra_consistency_loss,
    prototype_pseudo_labels,
)
from .models import (
    Model,
    build_model,
    head_digest,
    load_checkpoint,
    mc_forward,
    predict_proba,
    save_checkpoint,
)
from .optim import Adam, CosineDecay, SGD, make_optimizer
from .pretrain import PretrainConfig, pretrain_source
from .tensor import Tensor, grad_check, l2_normalize, softmax

__all__ = [
    "AdaptConfig",
    "AdaptResult",
    "AugPolicy",
    "Adam",
    "CosineDecay",
    "Dataset",
    "DomainAdapter",
    "LossReport",
    "Model",
    "PretrainConfig",
    "SGD",
    "SourceNetClassifier",
    "Tensor",
    "ViewBatch",
    "adapt_run",
    "adapt_step",
    "build_model",
    "class_prototypes",
    "combine_losses",
    "cosine_dissimilarity",
    "entropy_loss",
    "epistemic_loss",
    "evaluate",
    "grad_check",
    "head_digest",
    "inter_consistency_loss",
    "intra_consistency_loss",
    "l2_normalize",
    "load_checkpoint",
    "make_blobs_pair",
    "make_optimizer",
    "make_tiny_digits_pair",
    "make_two_moons_pair",
    "make_views",
    "mc_forward",
    "predict_proba",
    "pretrain_source",
    "prototype_pseudo_labels",
    "run_grid",
    "save_checkpoint",
    "softmax",
    "strong_transform",
    "weak_transform",
]
