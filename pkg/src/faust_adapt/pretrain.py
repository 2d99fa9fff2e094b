"""Supervised pretraining of source models.

Trains the full generator+head stack with cross-entropy (optionally
label-smoothed), weak augmentation, and a cosine learning-rate decay; 10% of
the training samples are spared as a validation split and the best-validation
parameters are kept.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .augment import AugPolicy, make_views
from .data import Dataset
from .models import Model, build_model, predict_proba
from .optim import CosineDecay, make_optimizer
from .rng import derive_rng
from .tensor import Tensor


class ConvergenceError(RuntimeError):
    """Validation accuracy stayed close to chance after the epoch budget."""


@dataclass
class PretrainConfig:
    label_smoothing: float = 0.1
    learning_rate: float = 0.01
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    max_epochs: int = 60
    val_fraction: float = 0.1
    augment_regime: str = "weak"
    augment_strength: float = 1.0
    augment_exclude: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")

    def to_dict(self) -> dict:
        return asdict(self)


def smoothed_cross_entropy(logits: Tensor, labels: np.ndarray, n_classes: int, smoothing: float) -> Tensor:
    """Mean cross-entropy against one-hot targets mixed with the uniform
    distribution: q = (1 - eps) * onehot + eps / K. At eps = 0 this is plain
    cross-entropy."""
    q = np.full((len(labels), n_classes), smoothing / n_classes)
    q[np.arange(len(labels)), labels] += 1.0 - smoothing
    return T.neg(T.tmean(T.tsum(T.mul(Tensor(q), T.log_softmax(logits)), axis=-1)))


def accuracy(model: Model, X: np.ndarray, y: np.ndarray) -> float:
    return float((predict_proba(model, X).argmax(axis=1) == y).mean())


def pretrain_source(
    dataset: Dataset, config: PretrainConfig | None = None
) -> tuple[Model, list[dict]]:
    """Train a source model on a labeled dataset.

    Returns the model restored to its best-validation parameters and a
    per-epoch history of (train_loss, val_accuracy). Raises
    ``ConvergenceError`` when the best validation accuracy never clears
    chance + 10 points.
    """
    config = config or PretrainConfig()
    data_seed = int(dataset.descriptor.get("seed", 0))
    train, val = dataset.split(config.val_fraction, seed=data_seed)
    model = build_model(dataset.model_input_shape, dataset.n_classes, seed=config.seed)

    x_train = train.model_inputs()
    y_train = train.labels
    x_val = val.model_inputs()

    steps_per_epoch = max(1, len(train) // config.batch_size)
    schedule = CosineDecay(config.learning_rate, config.max_epochs * steps_per_epoch)
    opt = make_optimizer(
        config.optimizer,
        model.trainable_parameters(),
        lr=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        schedule=schedule,
    )
    policy = AugPolicy(
        regime=config.augment_regime,
        n_views=1,
        strength=config.augment_strength,
        exclude_ops=tuple(config.augment_exclude),
        seed=int(derive_rng(config.seed, "augseed").integers(2**31)),
    )

    history: list[dict] = []
    best_acc = -1.0
    best_state = model.parameter_state()
    for epoch in range(config.max_epochs):
        perm = derive_rng(config.seed, "shuffle", epoch).permutation(len(train))
        losses = []
        for b in range(steps_per_epoch):
            idx = perm[b * config.batch_size : (b + 1) * config.batch_size]
            if len(idx) == 0:
                continue
            batch = make_views(x_train[idx], policy, step_key=epoch * steps_per_epoch + b)
            logits = model.logits(Tensor(batch.views[0]), train=True)
            loss = smoothed_cross_entropy(
                logits, y_train[idx], dataset.n_classes, config.label_smoothing
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
        val_acc = accuracy(model, x_val, val.labels)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_accuracy": val_acc})
        if val_acc > best_acc:
            best_acc = val_acc
            best_state = model.parameter_state()

    chance = 1.0 / dataset.n_classes
    if best_acc < chance + 0.1:
        raise ConvergenceError(
            f"pretraining failed to converge: best validation accuracy "
            f"{best_acc:.3f} < {chance + 0.1:.3f}"
        )
    model.load_parameter_state(best_state)
    model.meta = {
        "seed": config.seed,
        "epochs": config.max_epochs,
        "best_val_accuracy": best_acc,
        "source_dataset": dataset.descriptor,
    }
    return model, history
