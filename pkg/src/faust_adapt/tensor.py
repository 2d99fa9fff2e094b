"""Dense tensors with reverse-mode automatic differentiation.

Every layer, loss, and optimizer in this package is expressed through the
primitives defined here: broadcast arithmetic, matrix multiplication, a 2-d
convolution, reductions (sum, mean, sample standard deviation, L2 norm), and
the numerically stable softmax family. A tensor produced by an operation on
gradient-tracked inputs records its parents; ``Tensor.backward`` replays the
recorded graph in reverse topological order and accumulates gradients into
the leaves.

Tapes are single use per forward pass. Gradients accumulate across repeated
``backward`` calls until explicitly cleared (``Tensor.zero_grad`` or an
optimizer's ``zero_grad``). All data is float64; finite-difference checks are
unreliable in lower precision.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

# Floor inside L2-norm denominators; prevents division by zero for degenerate
# features without measurably biasing well-scaled ones.
NORM_EPS = 1e-12

# Floor for logarithms in entropy / cross-entropy terms; sharpened
# pseudo-labels produce numerically zero entries.
LOG_EPS = 1e-12


class ShapeMismatchError(ValueError):
    """Operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes) -> None:
        rendered = " and ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class GradCheckError(RuntimeError):
    """A finite-difference comparison encountered a non-finite value."""


class Tensor:
    """A float64 array plus optional participation in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item: tensor has {self.data.size} elements")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A tape-free view of the same data."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate gradients of every gradient-tracked leaf reachable from
        this scalar. Repeated calls accumulate until grads are cleared."""
        if self.data.size != 1:
            raise ValueError(
                f"backward: loss must be a scalar tensor, got shape {self.shape}"
            )
        if not self.requires_grad:
            raise ValueError("backward: tensor is not on the tape")

        order = _toposort(self)
        local: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = local.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.data.shape)
                key = id(parent)
                local[key] = pg if key not in local else local[key] + pg

    # -- reductions / views as methods for convenience ---------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self) -> str:
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast during the forward pass."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


# -- elementwise arithmetic (numpy broadcasting rules) -----------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatchError("add", a.shape, b.shape) from None
    return _make(data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeMismatchError("sub", a.shape, b.shape) from None
    return _make(data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatchError("mul", a.shape, b.shape) from None
    return _make(data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeMismatchError("div", a.shape, b.shape) from None
    return _make(
        data, (a, b), lambda g: (g / b.data, -g * a.data / (b.data * b.data))
    )


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError("matmul", a.shape, b.shape)
    data = a.data @ b.data
    return _make(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatchError("transpose", a.shape)
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError(f"reshape to {shape}", a.shape) from None
    src_shape = a.data.shape
    return _make(data.copy(), (a,), lambda g: (g.reshape(src_shape),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat: empty tensor list")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeMismatchError("concat", *(t.shape for t in ts)) from None
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tuple(ts), backward)


def stack(tensors: Sequence) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    ts = [_as_tensor(t) for t in tensors]
    return concat([reshape(t, (1,) + t.shape) for t in ts], axis=0)


# -- nonlinearities -----------------------------------------------------------


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def log(a, floor: float = 0.0) -> Tensor:
    """Natural log; with ``floor > 0`` the input is clamped below first and
    the gradient is zero in the clamped region. Without a floor, non-positive
    inputs propagate NaN/inf silently (grad_check reports them)."""
    a = _as_tensor(a)
    if floor > 0.0:
        safe = np.maximum(a.data, floor)
        live = a.data >= floor
        return _make(np.log(safe), (a,), lambda g: (np.where(live, g / safe, 0.0),))
    with np.errstate(invalid="ignore", divide="ignore"):
        data = np.log(a.data)
    return _make(data, (a,), lambda g: (g / a.data,))


def clamp_min(a, lo: float) -> Tensor:
    a = _as_tensor(a)
    mask = a.data >= lo
    return _make(np.maximum(a.data, lo), (a,), lambda g: (g * mask,))


# -- reductions ---------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool):
    if axis is None:
        return np.broadcast_to(g.reshape((1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def backward(g):
        return (_expand_reduced(g, shape, axis, keepdims),)

    return _make(np.asarray(data), (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    count = a.data.size if axis is None else shape[axis]

    def backward(g):
        return (_expand_reduced(g, shape, axis, keepdims) / count,)

    return _make(np.asarray(data), (a,), backward)


def std(a, axis: int, ddof: int = 1, keepdims: bool = False) -> Tensor:
    """Sample standard deviation along one axis (Bessel-corrected by default).

    The gradient contribution is zero wherever the deviation itself is zero.
    """
    a = _as_tensor(a)
    n = a.data.shape[axis]
    if n - ddof < 1:
        raise ValueError(f"std: need more than {ddof} values along axis {axis}")
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    sd = np.sqrt((centered * centered).sum(axis=axis, keepdims=True) / (n - ddof))
    data = sd if keepdims else np.squeeze(sd, axis=axis)
    shape = a.data.shape

    def backward(g):
        gk = _expand_reduced(g, shape, axis, keepdims)
        denom = np.where(sd > 0.0, (n - ddof) * sd, 1.0)
        return (np.where(sd > 0.0, gk * centered / denom, 0.0),)

    return _make(np.asarray(data), (a,), backward)


def l2norm(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    data = norm if keepdims else np.squeeze(norm, axis=axis)
    shape = a.data.shape

    def backward(g):
        gk = _expand_reduced(g, shape, axis, keepdims)
        return (gk * a.data / np.maximum(norm, NORM_EPS),)

    return _make(np.asarray(data), (a,), backward)


def l2_normalize(v, axis: int = -1) -> Tensor:
    """Scale vectors along ``axis`` to unit L2 norm; zero vectors map to zero
    via the epsilon floor rather than dividing by zero."""
    v = _as_tensor(v)
    return div(v, clamp_min(l2norm(v, axis=axis, keepdims=True), NORM_EPS))


# -- convolution --------------------------------------------------------------


def conv2d(x, w) -> Tensor:
    """Valid-mode, stride-1 2-d convolution.

    ``x`` is (batch, in_channels, H, W); ``w`` is (out_channels, in_channels,
    kh, kw). Output spatial size is (H - kh + 1, W - kw + 1).
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatchError("conv2d", x.shape, w.shape)
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatchError("conv2d", x.shape, w.shape)

    xd, wd = x.data, w.data
    out = np.zeros((x.shape[0], w.shape[0], ho, wo))
    for di in range(kh):
        for dj in range(kw):
            out += np.einsum(
                "bcij,oc->boij", xd[:, :, di : di + ho, dj : dj + wo], wd[:, :, di, dj]
            )

    def backward(g):
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        for di in range(kh):
            for dj in range(kw):
                gx[:, :, di : di + ho, dj : dj + wo] += np.einsum(
                    "boij,oc->bcij", g, wd[:, :, di, dj]
                )
                gw[:, :, di, dj] = np.einsum(
                    "boij,bcij->oc", g, xd[:, :, di : di + ho, dj : dj + wo]
                )
        return (gx, gw)

    return _make(out, (x, w), backward)


# -- softmax family -----------------------------------------------------------


def softmax(logits, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """Stable softmax with a sharpening temperature (small values push the
    output toward one-hot). The running maximum is subtracted as a constant,
    which leaves gradients untouched."""
    x = _as_tensor(logits)
    if temperature <= 0.0:
        raise ValueError(f"softmax: temperature must be positive, got {temperature}")
    if x.shape[axis] < 2:
        raise ValueError(f"softmax: need at least 2 classes, got shape {x.shape}")
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = exp(mul(sub(x, Tensor(shift)), 1.0 / temperature))
    return div(e, tsum(e, axis=axis, keepdims=True))


def log_softmax(logits, axis: int = -1) -> Tensor:
    x = _as_tensor(logits)
    if x.shape[axis] < 2:
        raise ValueError(f"log_softmax: need at least 2 classes, got shape {x.shape}")
    shifted = sub(x, Tensor(np.max(x.data, axis=axis, keepdims=True)))
    return sub(shifted, log(tsum(exp(shifted), axis=axis, keepdims=True)))


# -- gradient checking --------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-6) -> float:
    """Max relative error between the analytic gradient of ``f`` at ``x`` and
    a central finite difference.

    Relative error per coordinate is |analytic - numeric| / max(1, |numeric|).
    ``f`` is re-evaluated with ``x.data`` perturbed in place, so any state
    ``f`` closes over must be deterministic.
    """
    if not (1e-8 < step < 1e-3):
        raise ValueError(f"grad_check: step must be in (1e-8, 1e-3), got {step}")
    was_tracked = x.requires_grad
    x.requires_grad = True
    x.grad = None
    out = f(x)
    if out.size != 1:
        raise ValueError("grad_check: f must return a scalar tensor")
    out.backward()
    analytic = (x.grad if x.grad is not None else np.zeros_like(x.data)).ravel().copy()
    x.grad = None
    x.requires_grad = was_tracked

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x).item()
        flat[i] = orig - step
        fm = f(x).item()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * step)
        if not np.isfinite(numeric) or not np.isfinite(analytic[i]):
            raise GradCheckError(
                f"grad_check: non-finite value at coordinate {i} "
                f"(analytic={analytic[i]}, numeric={numeric})"
            )
        worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
