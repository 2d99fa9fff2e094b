"""Adaptation losses: feature-space and prediction-space consistency,
in-batch class prototypes with sharpened cosine pseudo-labels, conditional
entropy, and the MC-dropout spread penalty.

Shapes follow one convention throughout: clean features ``(batch, d)``, view
features ``(n_views, batch, d)``, probabilities ``(batch, K)``, view
probabilities ``(n_views, batch, K)``, MC stacks ``(n_samples, batch, K)``,
prototypes ``(d, K)`` with one column per class. Per-sample quantities are
reduced by the arithmetic mean over views and batch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import tensor as T
from .tensor import LOG_EPS, NORM_EPS, ShapeMismatchError, Tensor


@dataclass
class LossReport:
    """Scalar values of one training step's objective terms.

    ``total == inter + alpha*intra + beta*entropy + gamma*epistemic`` by
    construction; disabled terms are recorded as 0."""

    step: int
    inter: float
    intra: float
    entropy: float
    epistemic: float
    total: float
    alpha: float
    beta: float
    gamma: int
    lr: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "step": self.step,
                "inter": self.inter,
                "intra": self.intra,
                "entropy": self.entropy,
                "epistemic": self.epistemic,
                "total": self.total,
                "lr": self.lr,
            }
        )


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def cosine_dissimilarity(a, b) -> Tensor:
    """1 - cos(a, b) for two vectors, in [0, 2]; norms are epsilon-floored so
    zero vectors are safe."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatchError("cosine_dissimilarity", a.shape, b.shape)
    dot = T.tsum(T.mul(a, b))
    na = T.clamp_min(T.l2norm(a, axis=0), NORM_EPS)
    nb = T.clamp_min(T.l2norm(b, axis=0), NORM_EPS)
    return T.sub(1.0, T.div(dot, T.mul(na, nb)))


def intra_consistency_loss(features, view_features) -> Tensor:
    """Mean cosine dissimilarity between each clean feature and each of its
    augmented-view features; differentiable w.r.t. both arguments."""
    z = _as_tensor(features)
    zv = _as_tensor(view_features)
    if z.ndim != 2 or zv.ndim != 3 or zv.shape[1:] != z.shape:
        raise ShapeMismatchError("intra_consistency_loss", z.shape, zv.shape)
    dot = T.tsum(T.mul(z, zv), axis=-1)                      # (v, batch)
    nz = T.clamp_min(T.l2norm(z, axis=-1), NORM_EPS)         # (batch,)
    nv = T.clamp_min(T.l2norm(zv, axis=-1), NORM_EPS)        # (v, batch)
    return T.tmean(T.sub(1.0, T.div(dot, T.mul(nz, nv))))


def class_prototypes(features, probabilities) -> Tensor:
    """Confidence-weighted class prototypes from one clean mini-batch.

    Column k is ``sum_j p[j, k] * z[j]``. Callers wanting constant targets
    should pass detached inputs."""
    z = _as_tensor(features)
    p = _as_tensor(probabilities)
    if z.ndim != 2 or p.ndim != 2 or z.shape[0] != p.shape[0]:
        raise ShapeMismatchError("class_prototypes", z.shape, p.shape)
    if z.shape[0] == 0:
        raise ValueError("class_prototypes: empty batch")
    return T.matmul(T.transpose(z), p)


def prototype_pseudo_labels(features, prototypes, temperature: float) -> Tensor:
    """Soft class assignments from sharpened softmax over cosine similarity
    between features and prototype columns.

    Both sides are L2-normalized, so the result is invariant to positive
    rescaling of the features; an all-zero prototype column contributes a
    similarity of 0 via the epsilon floor."""
    z = _as_tensor(features)
    c = _as_tensor(prototypes)
    single = z.ndim == 1
    if single:
        z = T.reshape(z, (1, z.shape[0]))
    if z.ndim != 2 or c.ndim != 2 or z.shape[1] != c.shape[0]:
        raise ShapeMismatchError("prototype_pseudo_labels", z.shape, c.shape)
    if c.shape[1] < 2:
        raise ValueError(f"prototype_pseudo_labels: need >= 2 classes, got {c.shape[1]}")
    sims = T.matmul(T.l2_normalize(z, axis=1), T.l2_normalize(c, axis=0))
    s = T.softmax(sims, temperature=temperature)
    return T.reshape(s, (c.shape[1],)) if single else s


def inter_consistency_loss(targets, view_probabilities, detach_targets: bool = True) -> Tensor:
    """Mean cross-entropy between per-sample soft targets and the predicted
    distributions of each augmented view. Targets are treated as constants by
    default so the gradient flows only through the view predictions."""
    s = _as_tensor(targets)
    pv = _as_tensor(view_probabilities)
    if s.ndim != 2 or pv.ndim != 3 or pv.shape[1:] != s.shape:
        raise ShapeMismatchError("inter_consistency_loss", s.shape, pv.shape)
    if detach_targets:
        s = s.detach()
    ce = T.neg(T.tsum(T.mul(s, T.log(pv, floor=LOG_EPS)), axis=-1))  # (v, batch)
    return T.tmean(ce)


def entropy_loss(probabilities) -> Tensor:
    """Batch-mean Shannon entropy (natural log) of predicted distributions;
    in [0, ln K]."""
    p = _as_tensor(probabilities)
    if p.ndim != 2:
        raise ShapeMismatchError("entropy_loss", p.shape)
    return T.tmean(T.neg(T.tsum(T.mul(p, T.log(p, floor=LOG_EPS)), axis=-1)))


def epistemic_loss(mc_probabilities) -> Tensor:
    """Batch-mean L2 norm of the per-class sample standard deviation across
    MC-dropout passes (Bessel-corrected, divisor n-1)."""
    p = _as_tensor(mc_probabilities)
    if p.ndim != 3:
        raise ShapeMismatchError("epistemic_loss", p.shape)
    if p.shape[0] < 2:
        raise ValueError(
            f"epistemic_loss: need at least 2 MC samples, got {p.shape[0]}"
        )
    spread = T.std(p, axis=0, ddof=1)          # (batch, K)
    return T.tmean(T.l2norm(spread, axis=-1))  # mean over batch


def combine_losses(
    inter: Tensor | None,
    intra: Tensor | None,
    entropy: Tensor | None,
    epistemic: Tensor | None,
    alpha: float,
    beta: float,
    gamma: int,
    step: int = -1,
    lr: float = 0.0,
) -> tuple[Tensor, LossReport]:
    """Weighted objective ``inter + alpha*intra + beta*entropy +
    gamma*epistemic``. Terms passed as None are excluded entirely (their
    report entry is 0); ``gamma`` only switches the epistemic term on or off.
    """
    if alpha < 0 or beta < 0:
        raise ValueError(f"alpha and beta must be non-negative, got {alpha}, {beta}")
    if gamma not in (0, 1):
        raise ValueError(f"gamma must be 0 or 1, got {gamma}")
    if gamma == 1 and epistemic is None:
        raise ValueError("gamma=1 requires an epistemic loss value")
    terms: list[Tensor] = []
    if inter is not None:
        terms.append(inter)
    if intra is not None:
        terms.append(T.mul(intra, alpha))
    if entropy is not None:
        terms.append(T.mul(entropy, beta))
    if gamma == 1:
        terms.append(epistemic)
    if not terms:
        raise ValueError("no loss terms enabled")
    total = terms[0]
    for t in terms[1:]:
        total = T.add(total, t)
    report = LossReport(
        step=step,
        inter=inter.item() if inter is not None else 0.0,
        intra=intra.item() if intra is not None else 0.0,
        entropy=entropy.item() if entropy is not None else 0.0,
        epistemic=epistemic.item() if epistemic is not None else 0.0,
        total=total.item(),
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        lr=lr,
    )
    return total, report
