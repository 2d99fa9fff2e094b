"""Source-free adaptation loop.

Per mini-batch of unlabeled target samples: (1) eval-mode clean forward for
features and predictions, (2) in-batch confidence-weighted prototypes,
(3) sharpened cosine pseudo-labels, (4) train-mode forward of the augmented
views, (5) the enabled losses, (6) backward, (7) an optimizer step on the
feature generator only. The head classifier stays frozen throughout; target
labels are never accepted by the adaptation path, only by ``evaluate``.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict, field, replace

import numpy as np

from . import losses as L
from .augment import AugPolicy, make_views, strong_transform, weak_transform
from .models import Model, head_digest, load_checkpoint, mc_forward, predict_proba
from .optim import CosineDecay, make_optimizer
from .rng import derive_rng, derive_seed
from .tensor import Tensor
from . import tensor as T

# Tuning grid for the (alpha, beta) tradeoff pair when grid mode is on.
ALPHA_BETA_GRID = ((1.0, 0.0), (0.8, 0.2), (0.5, 0.5), (0.2, 0.8), (0.0, 1.0))


class DivergenceError(RuntimeError):
    """Total loss became non-finite during adaptation."""


@dataclass
class AdaptConfig:
    """Everything an adaptation run depends on; fully determines the run
    together with the source model and target samples."""

    alpha: float = 0.5
    beta: float = 0.5
    gamma: int = 0
    views: int = 2
    temperature: float = 0.025
    optimizer: str = "adam"
    learning_rate: float = 2e-4
    momentum: float = 0.9
    weight_decay: float = 5e-4
    schedule: str = "fixed"
    batch_size: int = 64
    max_epochs: int = 100
    early_stop_window: int = 10
    early_stop_tol: float = 1e-4
    mc_samples: int = 10
    generator_dropout: float = 0.1
    head_dropout: float = 0.4
    augment_regime: str = "strong"
    augment_strength: float = 1.0
    cutout_frac: float = 0.25
    include_consistency: bool = True
    detach_targets: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha and beta must be non-negative, got {self.alpha}, {self.beta}")
        if self.gamma not in (0, 1):
            raise ValueError(f"gamma must be 0 or 1, got {self.gamma}")
        if self.views < 1:
            raise ValueError(f"views must be >= 1, got {self.views}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.mc_samples < 2:
            raise ValueError(f"mc_samples must be >= 2, got {self.mc_samples}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.max_epochs < 0:
            raise ValueError(f"max_epochs must be >= 0, got {self.max_epochs}")
        if self.early_stop_window < 1:
            raise ValueError(f"early_stop_window must be >= 1, got {self.early_stop_window}")
        if self.schedule not in ("fixed", "cosine"):
            raise ValueError(f"schedule must be 'fixed' or 'cosine', got {self.schedule!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AdaptConfig":
        return cls(**d)

    def policy(self) -> AugPolicy:
        return AugPolicy(
            regime=self.augment_regime,
            n_views=self.views,
            strength=self.augment_strength,
            cutout_frac=self.cutout_frac,
            seed=derive_seed(self.seed, "views"),
        )


@dataclass
class EpochStat:
    epoch: int
    mean_total: float
    target_accuracy: float | None
    seconds: float


@dataclass
class RunLog:
    """Per-step loss reports plus per-epoch summaries.

    The JSONL serialization holds one object per step (step index, the four
    loss components, total, learning rate) followed by per-epoch objects;
    wall-clock timings stay in memory so logs are bitwise reproducible."""

    steps: list[L.LossReport] = field(default_factory=list)
    epochs: list[EpochStat] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [r.to_json() for r in self.steps]
        for e in self.epochs:
            entry = {"epoch": e.epoch, "mean_total": e.mean_total}
            if e.target_accuracy is not None:
                entry["target_accuracy"] = e.target_accuracy
            lines.append(json.dumps(entry))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.to_jsonl())


@dataclass
class AdaptResult:
    model: Model
    log: RunLog
    best_epoch: int
    stopped_epoch: int


def adapt_step(
    model: Model,
    batch: np.ndarray,
    config: AdaptConfig,
    optimizer,
    step_index: int,
) -> L.LossReport:
    """One adaptation update on a mini-batch of unlabeled target inputs."""
    if len(batch) < model.n_classes:
        raise ValueError(
            f"batch of {len(batch)} samples is smaller than the {model.n_classes}-class "
            "label set; resample with a larger batch so prototypes can be populated"
        )
    x = Tensor(batch)

    # Clean pass in eval mode: dropout off keeps prototype weights noise-free.
    z = model.features(x)
    p_clean = T.softmax(model.head_logits(z))

    l_inter = l_intra = None
    if config.include_consistency:
        z_t = z.detach() if config.detach_targets else z
        p_t = p_clean.detach() if config.detach_targets else p_clean
        prototypes = L.class_prototypes(z_t, p_t)
        targets = L.prototype_pseudo_labels(z_t, prototypes, config.temperature)

        # Views run without dropout even when gamma=1: the extra dropout
        # layers serve the MC sampling passes only.
        view_batch = make_views(batch, config.policy(), step_key=step_index)
        v, b = view_batch.views.shape[0], view_batch.views.shape[1]
        flat_views = Tensor(view_batch.views.reshape((v * b,) + view_batch.views.shape[2:]))
        z_views = model.features(flat_views)
        p_views = T.softmax(model.head_logits(z_views))
        z_views = T.reshape(z_views, (v, b) + tuple(z_views.shape[1:]))
        p_views = T.reshape(p_views, (v, b) + tuple(p_views.shape[1:]))

        l_intra = L.intra_consistency_loss(z, z_views)
        l_inter = L.inter_consistency_loss(targets, p_views, detach_targets=config.detach_targets)

    l_entropy = L.entropy_loss(p_clean)

    l_epistemic = None
    if config.gamma == 1:
        mc_seed = derive_seed(config.seed, "mc", step_index)
        l_epistemic = L.epistemic_loss(mc_forward(model, x, config.mc_samples, seed=mc_seed))

    total, report = L.combine_losses(
        l_inter,
        l_intra,
        l_entropy,
        l_epistemic,
        config.alpha,
        config.beta,
        config.gamma,
        step=step_index,
        lr=optimizer.current_lr,
    )
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return report


def _prepare_model(model: Model, config: AdaptConfig) -> None:
    model.head_trainable = False
    if config.gamma == 1:
        model.set_dropout_rates(config.generator_dropout, config.head_dropout)
    else:
        # Dropout layers stay disabled unless the epistemic term is on.
        model.set_dropout_rates(0.0, 0.0)


def adapt_run(
    source: Model | str,
    target_samples: np.ndarray,
    config: AdaptConfig | None = None,
    eval_data: tuple[np.ndarray, np.ndarray] | None = None,
) -> AdaptResult:
    """Adapt a source model's feature generator to unlabeled target samples.

    ``eval_data`` is an optional labeled split used purely for per-epoch
    accuracy logging; it never reaches a gradient. Early stopping fires when
    the moving average of the epoch losses stops improving by the configured
    tolerance; the returned model carries the best-by-loss parameters.
    """
    config = config or AdaptConfig()
    model = load_checkpoint(source)[0] if isinstance(source, str) else source
    target_samples = np.asarray(target_samples, dtype=np.float64)
    _prepare_model(model, config)

    optimizer = _make_adapt_optimizer(model, config, len(target_samples))
    frozen = head_digest(model)

    log = RunLog()
    best_loss = np.inf
    best_state = model.parameter_state()
    best_epoch = -1
    ma_prev = None
    epoch_losses: list[float] = []
    step_index = 0
    stopped = -1

    for epoch in range(config.max_epochs):
        tic = time.perf_counter()
        perm = derive_rng(config.seed, "shuffle", epoch).permutation(len(target_samples))
        totals = []
        for b0 in range(0, len(perm), config.batch_size):
            idx = perm[b0 : b0 + config.batch_size]
            if len(idx) < model.n_classes:
                continue
            report = adapt_step(model, target_samples[idx], config, optimizer, step_index)
            if not np.isfinite(report.total):
                raise DivergenceError(f"total loss is non-finite at step {step_index}")
            log.steps.append(report)
            totals.append(report.total)
            step_index += 1
        mean_total = float(np.mean(totals)) if totals else 0.0
        epoch_losses.append(mean_total)

        acc = None
        if eval_data is not None:
            acc = float(
                (predict_proba(model, eval_data[0]).argmax(axis=1) == eval_data[1]).mean()
            )
        log.epochs.append(EpochStat(epoch, mean_total, acc, time.perf_counter() - tic))

        if mean_total < best_loss:
            best_loss = mean_total
            best_state = model.parameter_state()
            best_epoch = epoch

        w = config.early_stop_window
        if len(epoch_losses) >= w:
            ma = float(np.mean(epoch_losses[-w:]))
            if ma_prev is not None and ma_prev - ma < config.early_stop_tol:
                stopped = epoch
                break
            ma_prev = ma

    model.load_parameter_state(best_state)
    assert head_digest(model) == frozen, "head parameters changed during adaptation"
    return AdaptResult(model=model, log=log, best_epoch=best_epoch, stopped_epoch=stopped)


def _make_adapt_optimizer(model: Model, config: AdaptConfig, n_samples: int):
    schedule = None
    if config.schedule == "cosine":
        steps = max(1, n_samples // config.batch_size) * max(1, config.max_epochs)
        schedule = CosineDecay(config.learning_rate, steps)
    return make_optimizer(
        config.optimizer,
        model.generator_parameters(),
        lr=config.learning_rate,
        momentum=config.momentum,
        weight_decay=config.weight_decay,
        schedule=schedule,
    )


def evaluate(
    model: Model,
    samples: np.ndarray,
    labels: np.ndarray,
    perturbation: str = "none",
    seed: int = 0,
) -> float:
    """Argmax accuracy on a labeled split, optionally with each sample
    perturbed once (deterministically in ``seed``) before inference."""
    if len(samples) == 0:
        raise ValueError("evaluate: empty dataset")
    if perturbation not in ("none", "weak", "strong"):
        raise ValueError(f"unknown perturbation {perturbation!r}")
    x = np.asarray(samples, dtype=np.float64)
    if perturbation != "none":
        transform = weak_transform if perturbation == "weak" else strong_transform
        x = np.stack([transform(x[i], seed=derive_seed(seed, "perturb", i)) for i in range(len(x))])
    return float((predict_proba(model, x).argmax(axis=1) == np.asarray(labels)).mean())


def _reference_loss(log: RunLog) -> float:
    """Weight-independent tuning score: best epoch-mean of inter + entropy.

    Raw totals are not comparable across (alpha, beta) pairs (small weights
    shrink the total trivially), so grid selection scores every trial on the
    same unweighted combination."""
    sums: dict[int, list[float]] = {}
    per_epoch = max(1, len(log.steps) // max(1, len(log.epochs)))
    for i, step in enumerate(log.steps):
        sums.setdefault(i // per_epoch, []).append(step.inter + step.entropy)
    if not sums:
        return np.inf
    return min(float(np.mean(v)) for v in sums.values())


def run_grid(
    source: Model | str,
    target_samples: np.ndarray,
    config: AdaptConfig,
    eval_data: tuple[np.ndarray, np.ndarray] | None = None,
    selection: str = "loss",
) -> tuple[AdaptResult, tuple[float, float], list[dict]]:
    """Adapt once per (alpha, beta) pair on the tuning grid and pick a winner.

    ``selection='loss'`` picks the lowest weight-independent reference loss
    without touching labels; ``selection='labeled'`` replicates tuning on a
    labeled target split and requires ``eval_data``.
    """
    if selection not in ("loss", "labeled"):
        raise ValueError(f"selection must be 'loss' or 'labeled', got {selection!r}")
    if selection == "labeled" and eval_data is None:
        raise ValueError("labeled grid selection requires eval_data")
    if isinstance(source, str):
        source = load_checkpoint(source)[0]
    rows = []
    best = None
    for alpha, beta in ALPHA_BETA_GRID:
        trial_cfg = replace(config, alpha=alpha, beta=beta)
        trial_model = load_state_copy(source)
        result = adapt_run(trial_model, target_samples, trial_cfg, eval_data=eval_data)
        loss = _reference_loss(result.log)
        acc = None
        if eval_data is not None:
            acc = evaluate(result.model, eval_data[0], eval_data[1])
        score = -loss if selection == "loss" else acc
        rows.append({"alpha": alpha, "beta": beta, "reference_loss": loss, "accuracy": acc})
        if best is None or score > best[0]:
            best = (score, result, (alpha, beta))
    _, result, pair = best
    return result, pair, rows


def load_state_copy(model: Model) -> Model:
    """A structurally identical model with copied parameters."""
    from .layers import layer_from_spec

    arch = model.architecture()
    clone = Model(
        generator=[layer_from_spec(s) for s in arch["generator"]],
        head=[layer_from_spec(s) for s in arch["head"]],
        input_shape=tuple(arch["input_shape"]),
        n_classes=arch["n_classes"],
        head_trainable=model.head_trainable,
        meta=dict(model.meta),
    )
    clone.load_parameter_state(model.parameter_state())
    return clone
