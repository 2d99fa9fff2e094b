"""Synthetic source/target dataset pairs with controllable shift, plus the
binary ``.fdat`` container.

Three families stand in for image benchmarks at desk scale:

* two-moons: two interleaved half circles; the target domain rotates every
  point about the origin.
* blobs: K Gaussian clusters; the target translates all clusters along one
  shared random direction and widens their covariance by 1.5x.
* tiny-digits: procedurally rendered 16x16 glyphs (bar, cross, ring,
  diagonal); the target inverts intensity and adds background noise.

File layout (little-endian): 8-byte magic, u32 version, u32 n, u32 K,
u32 rank then u32 extents, float32 samples row-major, u16 labels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import derive_rng

FDAT_MAGIC = b"FAUSTDAT"
FDAT_VERSION = 1


class DatasetFormatError(Exception):
    """Raised for malformed ``.fdat`` files."""


@dataclass
class Dataset:
    """Samples plus integer class labels and provenance of the generator."""

    samples: np.ndarray         # float32, (n, d) or (n, H, W)
    labels: np.ndarray          # int64 in [0, n_classes)
    n_classes: int
    domain: str = "source"
    descriptor: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise ValueError(
                f"{len(self.samples)} samples but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels out of range for {self.n_classes} classes")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return tuple(self.samples.shape[1:])

    @property
    def model_input_shape(self) -> tuple[int, ...]:
        """Shape the model consumes: rasters gain a channel axis."""
        shape = self.feature_shape
        return (1,) + shape if len(shape) == 2 else shape

    def model_inputs(self, index=None) -> np.ndarray:
        x = self.samples if index is None else self.samples[index]
        if len(self.feature_shape) == 2:
            return x.reshape((len(x), 1) + self.feature_shape).astype(np.float64)
        return x.astype(np.float64)

    def split(self, fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Deterministic shuffle split into (1 - fraction, fraction) parts."""
        if not 0.0 < fraction < 1.0:
            raise ValueError(f"fraction must be in (0, 1), got {fraction}")
        perm = derive_rng(seed, "split").permutation(len(self))
        n_second = max(1, int(round(fraction * len(self))))
        second, first = perm[:n_second], perm[n_second:]
        mk = lambda idx: Dataset(
            self.samples[idx], self.labels[idx], self.n_classes, self.domain, dict(self.descriptor)
        )
        return mk(first), mk(second)

    # -- io -------------------------------------------------------------------

    def save(self, path) -> None:
        shape = self.samples.shape
        with open(path, "wb") as f:
            f.write(FDAT_MAGIC)
            f.write(struct.pack("<I", FDAT_VERSION))
            f.write(struct.pack("<I", shape[0]))
            f.write(struct.pack("<I", self.n_classes))
            f.write(struct.pack("<I", len(shape) - 1))
            for n in shape[1:]:
                f.write(struct.pack("<I", n))
            f.write(np.ascontiguousarray(self.samples, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(self.labels, dtype="<u2").tobytes())

    @classmethod
    def load(cls, path, domain: str = "unknown") -> "Dataset":
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) < 8 or raw[:8] != FDAT_MAGIC:
            raise DatasetFormatError(f"{path}: bad magic bytes")
        off = 8
        try:
            version, n, k, rank = struct.unpack_from("<IIII", raw, off)
            off += 16
            if version != FDAT_VERSION:
                raise DatasetFormatError(f"{path}: unsupported version {version}")
            extents = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
        except struct.error as exc:
            raise DatasetFormatError(f"{path}: truncated header") from exc
        count = int(n) * int(np.prod(extents, dtype=np.int64)) if rank else int(n)
        sample_bytes = count * 4
        if off + sample_bytes + n * 2 != len(raw):
            raise DatasetFormatError(f"{path}: payload size mismatch")
        samples = np.frombuffer(raw[off : off + sample_bytes], dtype="<f4").reshape((n,) + extents)
        labels = np.frombuffer(raw[off + sample_bytes :], dtype="<u2").astype(np.int64)
        return cls(samples.copy(), labels, n_classes=int(k), domain=domain)


# -- generators -----------------------------------------------------------------


def _moons(n: int, noise: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n0 = n // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, np.pi, n0)
    t1 = rng.uniform(0.0, np.pi, n1)
    top = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    bottom = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([top, bottom], axis=0)
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    x += rng.normal(0.0, noise, size=x.shape)
    perm = rng.permutation(n)
    return x[perm], y[perm]


def make_two_moons_pair(
    n: int, rotation_deg: float, noise: float = 0.1, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """Source moons and a target drawn from the same generator (disjoint
    stream) with every point rotated about the origin."""
    if n < 100:
        raise ValueError(f"two-moons needs n >= 100, got {n}")
    if not 0.0 <= rotation_deg <= 90.0:
        raise ValueError(f"rotation must be in [0, 90] degrees, got {rotation_deg}")
    if noise < 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    desc = {"family": "two-moons", "n": n, "rotation_deg": rotation_deg, "noise": noise, "seed": seed}
    xs, ys = _moons(n, noise, derive_rng(seed, "moons-source"))
    xt, yt = _moons(n, noise, derive_rng(seed, "moons-target"))
    theta = np.radians(rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    xt = xt @ rot.T
    return (
        Dataset(xs, ys, 2, "source", desc),
        Dataset(xt, yt, 2, "target", desc),
    )


def make_blobs_pair(
    n: int, n_classes: int = 3, n_features: int = 4, shift_magnitude: float = 2.0, seed: int = 0
) -> tuple[Dataset, Dataset]:
    """K Gaussian clusters; target clusters are translated along a shared
    random direction and widened by a 1.5x covariance scale."""
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if n_features < 2:
        raise ValueError(f"need at least 2 features, got {n_features}")
    if n < 10 * n_classes:
        raise ValueError(f"need n >= {10 * n_classes} for {n_classes} classes, got {n}")
    desc = {
        "family": "blobs",
        "n": n,
        "n_classes": n_classes,
        "n_features": n_features,
        "shift_magnitude": shift_magnitude,
        "seed": seed,
    }
    rng = derive_rng(seed, "blobs-means")
    for _ in range(100):
        means = rng.uniform(-4.0, 4.0, size=(n_classes, n_features))
        dists = np.linalg.norm(means[:, None] - means[None, :], axis=-1)
        if dists[~np.eye(n_classes, dtype=bool)].min() >= 2.0:
            break
    direction = rng.normal(size=n_features)
    direction /= np.linalg.norm(direction)
    sigma = 0.6

    def draw(rng_draw, shift, scale):
        counts = [n // n_classes + (1 if i < n % n_classes else 0) for i in range(n_classes)]
        xs, ys = [], []
        for k, c in enumerate(counts):
            pts = means[k] + shift + rng_draw.normal(0.0, sigma * scale, size=(c, n_features))
            xs.append(pts)
            ys.append(np.full(c, k, dtype=np.int64))
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        perm = rng_draw.permutation(len(x))
        return x[perm], y[perm]

    xs, ys = draw(derive_rng(seed, "blobs-source"), 0.0, 1.0)
    xt, yt = draw(derive_rng(seed, "blobs-target"), shift_magnitude * direction, np.sqrt(1.5))
    return (
        Dataset(xs, ys, n_classes, "source", desc),
        Dataset(xt, yt, n_classes, "target", desc),
    )


GLYPH_CLASSES = ("bar", "cross", "ring", "diagonal")


def _render_glyph(label: int, rng: np.random.Generator) -> np.ndarray:
    # Backgrounds vary and a small fraction of glyphs carry reversed
    # contrast, so source-trained features are partially polarity-invariant
    # and a source model lands above chance (not high) on the inverted
    # target domain. The shift stays severe: intensities flip plus noise.
    bg = rng.uniform(0.1, 0.4)
    delta = rng.uniform(0.3, 0.5)
    if rng.random() < 0.25:
        delta = -delta
    img = np.full((16, 16), bg)
    a = float(np.clip(bg + delta, 0.0, 1.0))
    jy, jx = int(rng.integers(-2, 3)), int(rng.integers(-2, 3))
    cy, cx = 8 + jy, 8 + jx
    if label == 0:  # bar: vertical stroke
        c = min(max(cx, 2), 13)
        img[2:14, c - 1 : c + 1] = a
    elif label == 1:  # cross
        cy = min(max(cy, 3), 12)
        cx = min(max(cx, 3), 12)
        img[cy - 1 : cy + 1, 2:14] = a
        img[2:14, cx - 1 : cx + 1] = a
    elif label == 2:  # ring
        r = rng.uniform(4.0, 6.0)
        yy, xx = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        dist = np.sqrt((yy - 7.5 - 0.5 * jy) ** 2 + (xx - 7.5 - 0.5 * jx) ** 2)
        img[np.abs(dist - r) < 1.0] = a
    else:  # diagonal stroke
        off = int(rng.integers(-3, 4))
        yy, xx = np.meshgrid(np.arange(16), np.arange(16), indexing="ij")
        img[np.abs(yy - xx - off) <= 1] = a
    img += rng.normal(0.0, 0.05, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _digits(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    k = len(GLYPH_CLASSES)
    labels = np.concatenate(
        [np.full(n // k + (1 if i < n % k else 0), i, dtype=np.int64) for i in range(k)]
    )
    imgs = np.stack([_render_glyph(int(lbl), rng) for lbl in labels])
    perm = rng.permutation(n)
    return imgs[perm], labels[perm]


def invert_raster(x: np.ndarray, noise: float, rng: np.random.Generator) -> np.ndarray:
    return np.clip(1.0 - x + rng.normal(0.0, noise, size=x.shape), 0.0, 1.0)


def make_tiny_digits_pair(n: int, seed: int = 0) -> tuple[Dataset, Dataset]:
    """16x16 glyphs over 4 shape classes; the target domain inverts intensity
    and adds background noise of sigma 0.2."""
    if n < 500:
        raise ValueError(f"tiny-digits needs n >= 500, got {n}")
    desc = {"family": "tiny-digits", "n": n, "seed": seed}
    xs, ys = _digits(n, derive_rng(seed, "digits-source"))
    xt_clean, yt = _digits(n, derive_rng(seed, "digits-target"))
    xt = invert_raster(xt_clean, 0.2, derive_rng(seed, "digits-invert"))
    return (
        Dataset(xs, ys, 4, "source", desc),
        Dataset(xt, yt, 4, "target", desc),
    )


FAMILIES = {
    "two-moons": make_two_moons_pair,
    "blobs": make_blobs_pair,
    "tiny-digits": make_tiny_digits_pair,
}
