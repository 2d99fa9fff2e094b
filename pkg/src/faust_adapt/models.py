"""Split classifier models (feature generator + head), MC-dropout forward
passes, and binary checkpoint serialization.

A model is a feature generator followed by a head classifier. During
adaptation the head is frozen: optimizers are handed generator parameters
only, and ``head_digest`` lets callers assert the freeze held. Checkpoints
use a little-endian container: 8-byte magic, u32 version, length-prefixed
JSON architecture header, then raw parameter payloads in declaration order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .layers import Conv2d, Dense, Dropout, Flatten, Layer, ReLU, layer_from_spec
from .rng import derive_rng
from .tensor import ShapeMismatchError, Tensor

CKPT_MAGIC = b"FAUSTCKP"
CKPT_VERSION = 1

_DTYPES = {"f8": "<f8", "f4": "<f4"}


class CheckpointError(Exception):
    """Base class for checkpoint file problems."""


class CheckpointFormatError(CheckpointError):
    """Magic bytes or container structure are wrong."""


class CheckpointVersionError(CheckpointError):
    """File was written by an incompatible format version."""


class CheckpointTruncatedError(CheckpointError):
    """File ends before the declared payload does."""


@dataclass
class Model:
    """Feature generator plus head classifier over a shared gradient tape."""

    generator: list[Layer]
    head: list[Layer]
    input_shape: tuple[int, ...]
    n_classes: int
    head_trainable: bool = True
    meta: dict = field(default_factory=dict)

    def _check_input(self, x: Tensor) -> None:
        if tuple(x.shape[1:]) != tuple(self.input_shape):
            raise ShapeMismatchError(
                "model forward", x.shape, (-1,) + tuple(self.input_shape)
            )

    def features(self, x, train: bool = False, rng=None) -> Tensor:
        """Run the feature generator; dropout is identity unless ``train``."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        self._check_input(x)
        for layer in self.generator:
            x = layer.forward(x, train=train, rng=rng)
        return x

    def head_logits(self, z, train: bool = False, rng=None) -> Tensor:
        for layer in self.head:
            z = layer.forward(z, train=train, rng=rng)
        return z

    def logits(self, x, train: bool = False, rng=None) -> Tensor:
        """Pre-softmax class scores head(generator(x))."""
        return self.head_logits(self.features(x, train=train, rng=rng), train=train, rng=rng)

    # -- parameter access ----------------------------------------------------

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for group, layers in (("generator", self.generator), ("head", self.head)):
            for i, layer in enumerate(layers):
                for pname, p in layer.parameters():
                    out.append((f"{group}.{i}.{pname}", p))
        return out

    def generator_parameters(self) -> list[Tensor]:
        return [p for name, p in self.named_parameters() if name.startswith("generator.")]

    def head_parameters(self) -> list[Tensor]:
        return [p for name, p in self.named_parameters() if name.startswith("head.")]

    def trainable_parameters(self) -> list[Tensor]:
        params = self.generator_parameters()
        if self.head_trainable:
            params += self.head_parameters()
        return params

    def parameter_state(self) -> list[np.ndarray]:
        return [p.data.copy() for _, p in self.named_parameters()]

    def load_parameter_state(self, state: list[np.ndarray]) -> None:
        params = self.named_parameters()
        if len(state) != len(params):
            raise ValueError(f"state has {len(state)} arrays, model has {len(params)}")
        for (_, p), arr in zip(params, state):
            if p.data.shape != arr.shape:
                raise ShapeMismatchError("load_parameter_state", arr.shape, p.data.shape)
            p.data = np.ascontiguousarray(arr, dtype=np.float64)

    # -- dropout configuration -------------------------------------------------

    def set_dropout_rates(self, generator_rate: float, head_rate: float) -> None:
        for layer in self.generator:
            if isinstance(layer, Dropout):
                layer.rate = generator_rate
        for layer in self.head:
            if isinstance(layer, Dropout):
                layer.rate = head_rate

    def dropout_rates(self) -> tuple[float, float]:
        g = next((l.rate for l in self.generator if isinstance(l, Dropout)), 0.0)
        h = next((l.rate for l in self.head if isinstance(l, Dropout)), 0.0)
        return g, h

    def architecture(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "n_classes": self.n_classes,
            "generator": [l.spec() for l in self.generator],
            "head": [l.spec() for l in self.head],
        }


def build_model(
    input_shape: tuple[int, ...],
    n_classes: int,
    generator_dropout: float = 0.0,
    head_dropout: float = 0.0,
    seed: int = 0,
) -> Model:
    """Desk-scale architecture for vector (d,) or raster (1, H, W) inputs.

    Vector: generator dense(d, 64)-relu-dropout-dense(64, 32)-relu.
    Raster: generator conv(8, 3x3)-relu-conv(16, 3x3)-relu-flatten-dropout-dense(32).
    Head in both cases: dense(32, 32)-relu-dropout-dense(32, K).
    """
    input_shape = tuple(int(n) for n in input_shape)
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    rng = derive_rng(seed, "init")
    if len(input_shape) == 1:
        d = input_shape[0]
        generator: list[Layer] = [
            Dense(d, 64, rng=rng),
            ReLU(),
            Dropout(generator_dropout),
            Dense(64, 32, rng=rng),
            ReLU(),
        ]
    elif len(input_shape) == 3:
        c, h, w = input_shape
        flat = 16 * (h - 4) * (w - 4)
        generator = [
            Conv2d(c, 8, 3, rng=rng),
            ReLU(),
            Conv2d(8, 16, 3, rng=rng),
            ReLU(),
            Flatten(),
            Dropout(generator_dropout),
            Dense(flat, 32, rng=rng),
        ]
    else:
        raise ValueError(f"unsupported input shape {input_shape}")
    head: list[Layer] = [
        Dense(32, 32, rng=rng),
        ReLU(),
        Dropout(head_dropout),
        Dense(32, n_classes, rng=rng),
    ]
    return Model(generator=generator, head=head, input_shape=input_shape, n_classes=n_classes)


def mc_forward(model: Model, x, n_samples: int, seed: int) -> Tensor:
    """Stack of ``n_samples`` stochastic softmax outputs with dropout forced
    on regardless of mode. Deterministic for a fixed seed; with all dropout
    rates at zero the passes are identical."""
    if n_samples < 2:
        raise ValueError(
            f"mc_forward: need at least 2 samples for a standard deviation, got {n_samples}"
        )
    outs = []
    for i in range(n_samples):
        rng = derive_rng(seed, "mc", i)
        outs.append(T.softmax(model.logits(x, train=True, rng=rng)))
    return T.stack(outs)


def predict_proba(model: Model, X: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode class probabilities for a sample array."""
    chunks = []
    for start in range(0, len(X), batch_size):
        logits = model.logits(Tensor(X[start : start + batch_size]))
        chunks.append(T.softmax(logits).data)
    return np.concatenate(chunks, axis=0)


def parameter_digest(params: list[Tensor]) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def head_digest(model: Model) -> str:
    return parameter_digest(model.head_parameters())


# -- checkpoint io -------------------------------------------------------------


def save_checkpoint(model: Model, path, meta: dict | None = None, dtype: str = "f8") -> None:
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported checkpoint dtype {dtype!r}")
    header = {
        "architecture": model.architecture(),
        "dtype": dtype,
        "params": [
            {"name": name, "shape": list(p.shape)} for name, p in model.named_parameters()
        ],
        "meta": dict(meta or model.meta or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for _, p in model.named_parameters():
            f.write(np.ascontiguousarray(p.data, dtype=_DTYPES[dtype]).tobytes())


def load_checkpoint(path) -> tuple[Model, dict]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(CKPT_MAGIC) + 8:
        raise CheckpointTruncatedError(f"{path}: file shorter than fixed header")
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic bytes")
    off = len(CKPT_MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != CKPT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, expected {CKPT_VERSION}"
        )
    (hlen,) = struct.unpack_from("<I", raw, off)
    off += 4
    if off + hlen > len(raw):
        raise CheckpointTruncatedError(f"{path}: architecture header cut short")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable architecture header") from exc
    off += hlen

    arch = header["architecture"]
    dtype = header.get("dtype", "f8")
    if dtype not in _DTYPES:
        raise CheckpointFormatError(f"{path}: unknown payload dtype {dtype!r}")
    model = Model(
        generator=[layer_from_spec(s) for s in arch["generator"]],
        head=[layer_from_spec(s) for s in arch["head"]],
        input_shape=tuple(arch["input_shape"]),
        n_classes=arch["n_classes"],
        meta=dict(header.get("meta", {})),
    )
    np_dtype = np.dtype(_DTYPES[dtype])
    params = model.named_parameters()
    declared = header["params"]
    if [n for n, _ in params] != [d["name"] for d in declared]:
        raise CheckpointFormatError(f"{path}: parameter list does not match architecture")
    state = []
    for decl in declared:
        shape = tuple(decl["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * np_dtype.itemsize
        if off + nbytes > len(raw):
            raise CheckpointTruncatedError(f"{path}: payload for {decl['name']} cut short")
        arr = np.frombuffer(raw[off : off + nbytes], dtype=np_dtype).reshape(shape)
        state.append(arr.astype(np.float64))
        off += nbytes
    if off != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - off} trailing bytes")
    model.load_parameter_state(state)
    return model, model.meta
