"""Stochastic view generation for vector and tiny-raster samples.

Two regimes, mirroring the usual weak/strong split:

* weak: flip-and-shift style. Rasters get a coin-flip horizontal mirror plus
  a small integer translation; vectors get a single-coordinate sign flip plus
  uniform jitter of at most 10% of the magnitude knob. Zero magnitude is the
  identity.
* strong: two operations drawn from a pool of heavier distortions with random
  magnitudes, followed by cutout (rasters zero a square patch; the vector
  pool already includes coordinate dropout). Raster outputs stay in [0, 1].

Every transform is a pure function of (sample, rng); view streams are keyed
by (policy seed, step, view index, sample index) so results are independent
of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import derive_rng

REGIMES = ("weak", "strong")

# Strong-regime magnitude ranges.
VECTOR_JITTER_SIGMA = (0.05, 0.3)
VECTOR_DROPOUT_FRACTION = 0.2
VECTOR_ROTATION_MAX_DEG = 20.0
RASTER_TRANSLATE_FRACTION = 0.2
RASTER_ROTATION_MAX_DEG = 30.0
RASTER_CONTRAST_RANGE = 0.5
RASTER_BRIGHTNESS_RANGE = 0.3
RASTER_NOISE_SIGMA = (0.05, 0.2)


@dataclass(frozen=True)
class AugPolicy:
    """How views are produced: regime, view count, strength, cutout size.

    ``exclude_ops`` drops named operations from the strong pool; benchmark
    harnesses use it to keep a dataset's own domain-shift operator out of
    source training."""

    regime: str = "strong"
    n_views: int = 2
    strength: float = 1.0
    cutout_frac: float = 0.25
    exclude_ops: tuple[str, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown augmentation regime {self.regime!r}")
        if self.n_views < 1:
            raise ValueError(f"n_views must be >= 1, got {self.n_views}")
        if self.strength < 0:
            raise ValueError(f"strength must be >= 0, got {self.strength}")
        if not 0.0 <= self.cutout_frac <= 1.0:
            raise ValueError(f"cutout_frac must be in [0, 1], got {self.cutout_frac}")
        known = set(VECTOR_OPS) | set(RASTER_OPS)
        unknown = set(self.exclude_ops) - known
        if unknown:
            raise ValueError(f"unknown ops in exclude_ops: {sorted(unknown)}")
        object.__setattr__(self, "exclude_ops", tuple(self.exclude_ops))

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "n_views": self.n_views,
            "strength": self.strength,
            "cutout_frac": self.cutout_frac,
            "exclude_ops": list(self.exclude_ops),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AugPolicy":
        d = dict(d)
        if "exclude_ops" in d:
            d["exclude_ops"] = tuple(d["exclude_ops"])
        return cls(**d)


@dataclass
class ViewBatch:
    """A clean mini-batch plus ``n_views`` augmented copies of each sample.

    ``views[i, j]`` is the i-th view of sample j; the clean batch is never
    transformed."""

    clean: np.ndarray
    views: np.ndarray

    @property
    def n_views(self) -> int:
        return self.views.shape[0]


# -- vector transforms ---------------------------------------------------------


def _weak_vector(x: np.ndarray, rng: np.random.Generator, magnitude: float) -> np.ndarray:
    out = x.astype(np.float64).copy()
    if magnitude <= 0.0:
        return out
    if rng.random() < 0.5:
        i = int(rng.integers(out.size))
        out[i] *= 1.0 - 2.0 * magnitude
    out += rng.uniform(-0.1 * magnitude, 0.1 * magnitude, size=out.shape)
    return out


def _vec_jitter(x, rng, strength):
    lo, hi = VECTOR_JITTER_SIGMA
    sigma = rng.uniform(lo, hi) * strength
    return x + rng.normal(0.0, sigma, size=x.shape)


def _vec_dropout(x, rng, strength):
    k = round(VECTOR_DROPOUT_FRACTION * x.size)
    if k == 0:
        return x.copy()
    idx = rng.choice(x.size, size=k, replace=False)
    out = x.copy()
    out[idx] = 0.0
    return out


def _vec_rotate(x, rng, strength):
    if x.size < 2:
        return x.copy()
    i, j = rng.choice(x.size, size=2, replace=False)
    theta = math.radians(rng.uniform(-VECTOR_ROTATION_MAX_DEG, VECTOR_ROTATION_MAX_DEG) * strength)
    c, s = math.cos(theta), math.sin(theta)
    out = x.copy()
    out[i] = c * x[i] - s * x[j]
    out[j] = s * x[i] + c * x[j]
    return out


VECTOR_OPS = {"jitter": _vec_jitter, "dropout": _vec_dropout, "rotate": _vec_rotate}


def _strong_vector(
    x: np.ndarray, rng: np.random.Generator, strength: float, exclude: tuple[str, ...] = ()
) -> np.ndarray:
    out = x.astype(np.float64).copy()
    if strength <= 0.0:
        return out
    pool = [fn for name, fn in VECTOR_OPS.items() if name not in exclude]
    for op_index in rng.integers(len(pool), size=2):
        out = pool[op_index](out, rng, strength)
    return out


# -- raster transforms ---------------------------------------------------------


def _ras_translate(x, rng, strength):
    h, w = x.shape
    r = round(RASTER_TRANSLATE_FRACTION * strength * min(h, w))
    if r == 0:
        return x.copy()
    dy, dx = int(rng.integers(-r, r + 1)), int(rng.integers(-r, r + 1))
    out = np.zeros_like(x)
    ys = slice(max(0, dy), min(h, h + dy))
    xs = slice(max(0, dx), min(w, w + dx))
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = x[ys_src, xs_src]
    return out


def _ras_rotate(x, rng, strength):
    theta = math.radians(rng.uniform(-RASTER_ROTATION_MAX_DEG, RASTER_ROTATION_MAX_DEG) * strength)
    if theta == 0.0:
        return x.copy()
    h, w = x.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    c, s = math.cos(theta), math.sin(theta)
    src_y = np.round(c * (yy - cy) + s * (xx - cx) + cy).astype(int)
    src_x = np.round(-s * (yy - cy) + c * (xx - cx) + cx).astype(int)
    valid = (src_y >= 0) & (src_y < h) & (src_x >= 0) & (src_x < w)
    out = np.zeros_like(x)
    out[valid] = x[src_y[valid], src_x[valid]]
    return out


def _ras_invert(x, rng, strength):
    return 1.0 - x


def _ras_contrast(x, rng, strength):
    f = 1.0 + rng.uniform(-RASTER_CONTRAST_RANGE, RASTER_CONTRAST_RANGE) * strength
    return 0.5 + f * (x - 0.5)


def _ras_brightness(x, rng, strength):
    return x + rng.uniform(-RASTER_BRIGHTNESS_RANGE, RASTER_BRIGHTNESS_RANGE) * strength


def _ras_noise(x, rng, strength):
    lo, hi = RASTER_NOISE_SIGMA
    return x + rng.normal(0.0, rng.uniform(lo, hi) * strength, size=x.shape)


RASTER_OPS = {
    "translate": _ras_translate,
    "rotate": _ras_rotate,
    "invert": _ras_invert,
    "contrast": _ras_contrast,
    "brightness": _ras_brightness,
    "noise": _ras_noise,
}


def _cutout(x: np.ndarray, rng: np.random.Generator, frac: float) -> np.ndarray:
    h, w = x.shape
    side = round(frac * min(h, w))
    if side == 0:
        return x
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    out = x.copy()
    out[top : top + side, left : left + side] = 0.0
    return out


def _weak_raster(x: np.ndarray, rng: np.random.Generator, magnitude: float) -> np.ndarray:
    out = x.astype(np.float64).copy()
    if magnitude <= 0.0:
        return out
    if rng.random() < 0.5:
        out = out[:, ::-1].copy()
    r = round(0.1 * magnitude * min(out.shape))
    if r > 0:
        dy, dx = int(rng.integers(-r, r + 1)), int(rng.integers(-r, r + 1))
        shifted = np.zeros_like(out)
        ys = slice(max(0, dy), min(out.shape[0], out.shape[0] + dy))
        xs = slice(max(0, dx), min(out.shape[1], out.shape[1] + dx))
        shifted[ys, xs] = out[
            max(0, -dy) : out.shape[0] - max(0, dy), max(0, -dx) : out.shape[1] - max(0, dx)
        ]
        out = shifted
    return out


def _strong_raster(
    x: np.ndarray,
    rng: np.random.Generator,
    strength: float,
    cutout_frac: float,
    exclude: tuple[str, ...] = (),
) -> np.ndarray:
    out = x.astype(np.float64).copy()
    if strength <= 0.0:
        return out
    pool = [fn for name, fn in RASTER_OPS.items() if name not in exclude]
    for op_index in rng.integers(len(pool), size=2):
        out = pool[op_index](out, rng, strength)
    out = _cutout(out, rng, cutout_frac)
    return np.clip(out, 0.0, 1.0)


# -- public entry points ---------------------------------------------------------


def _is_raster(sample: np.ndarray) -> bool:
    return sample.ndim >= 2


def weak_transform(sample: np.ndarray, seed: int, magnitude: float = 1.0) -> np.ndarray:
    """One weakly augmented copy of a single sample."""
    sample = np.asarray(sample, dtype=np.float64)
    rng = derive_rng(seed, "weak")
    if _is_raster(sample):
        return _weak_raster(sample.reshape(sample.shape[-2:]), rng, magnitude).reshape(sample.shape)
    return _weak_vector(sample, rng, magnitude)


def strong_transform(
    sample: np.ndarray, seed: int, strength: float = 1.0, cutout_frac: float = 0.25
) -> np.ndarray:
    """One strongly augmented copy of a single sample."""
    sample = np.asarray(sample, dtype=np.float64)
    rng = derive_rng(seed, "strong")
    if _is_raster(sample):
        out = _strong_raster(sample.reshape(sample.shape[-2:]), rng, strength, cutout_frac)
        return out.reshape(sample.shape)
    return _strong_vector(sample, rng, strength)


def _transform(sample: np.ndarray, rng: np.random.Generator, policy: AugPolicy) -> np.ndarray:
    if _is_raster(sample):
        flat = sample.reshape(sample.shape[-2:])
        if policy.regime == "weak":
            out = _weak_raster(flat, rng, policy.strength)
        else:
            out = _strong_raster(flat, rng, policy.strength, policy.cutout_frac, policy.exclude_ops)
        return out.reshape(sample.shape)
    if policy.regime == "weak":
        return _weak_vector(sample, rng, policy.strength)
    return _strong_vector(sample, rng, policy.strength, policy.exclude_ops)


def make_views(batch: np.ndarray, policy: AugPolicy, step_key: int = 0) -> ViewBatch:
    """The clean batch plus ``policy.n_views`` augmented copies per sample.

    ``step_key`` varies the view stream across training steps so fresh views
    are drawn every epoch while staying reproducible."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] == 0:
        raise ValueError("make_views: empty batch")
    views = np.empty((policy.n_views,) + batch.shape, dtype=np.float64)
    for i in range(policy.n_views):
        for j in range(batch.shape[0]):
            rng = derive_rng(policy.seed, "views", step_key, i, j)
            views[i, j] = _transform(batch[j], rng, policy)
    return ViewBatch(clean=batch.copy(), views=views)
