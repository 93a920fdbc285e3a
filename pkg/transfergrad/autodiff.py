"""
Reverse-mode automatic differentiation over dense numpy arrays.

A ``Tensor`` is an immutable wrapper around a read-only ``numpy.ndarray``. Primitive
operations always compute their forward value; while a ``ComputationRecord`` is active
(``with record() as rec:``) each primitive also appends a node holding its input ids, its
output id and a vector-Jacobian rule. ``backward(rec, loss)`` sweeps those nodes in
reverse and returns the gradient of every marked leaf.

Primitive set
-------------
add, sub, mul        elementwise; equal shapes, or one operand a 0-d scalar tensor
scale                multiply by a Python scalar
matmul               2-D matrix product
bias_add             add a per-channel vector along axis 1
reshape              view with a new shape
conv2d               stride 1, zero "same" padding, odd square kernels (patch expansion)
relu                 gradient 0 at exactly 0
maxpool2x2           2x2 windows, stride 2, first maximum wins on ties
mean_batch           mean over axis 0
sum_all              sum of every element
softmax_cross_entropy  per-example loss against integer labels

No other broadcasting is supported. Records are thread-local: concurrent threads may each
hold their own active record.
"""

from __future__ import annotations

import itertools
import threading
from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from transfergrad.errors import DomainError, NumericalError, RecordError, ShapeError

DEFAULT_DTYPE = np.float32

_ids = itertools.count()
_state = threading.local()

VJP = Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


class Tensor:
    """Immutable dense array; ``shape`` and ``data`` as in the numpy array it wraps."""

    __slots__ = ("data", "id")

    def __init__(self, data, dtype=None):
        if dtype is None:
            is_float = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if is_float else DEFAULT_DTYPE
        arr = np.array(data, dtype=dtype, copy=True)
        if not np.all(np.isfinite(arr)):
            raise NumericalError("Tensor: non-finite values in constructor input")
        self.data: np.ndarray = _freeze(arr)
        self.id: int = next(_ids)

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> Tensor:
        t = cls.__new__(cls)
        t.data = _freeze(arr)
        t.id = next(_ids)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def _lift(self, other) -> Tensor:
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other) -> Tensor:
        return add(self, self._lift(other))

    def __radd__(self, other) -> Tensor:
        return add(self._lift(other), self)

    def __sub__(self, other) -> Tensor:
        return sub(self, self._lift(other))

    def __rsub__(self, other) -> Tensor:
        return sub(self._lift(other), self)

    def __mul__(self, other) -> Tensor:
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, self._lift(other))

    def __rmul__(self, other) -> Tensor:
        return self.__mul__(other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)


def constant(data, dtype=None) -> Tensor:
    """Non-differentiable input (data batch, fixed parameters)."""
    return Tensor(data, dtype=dtype)


@dataclass(frozen=True)
class Node:
    """One primitive application: ``output = op(*inputs)`` plus its backward rule."""

    op: str
    inputs: tuple[int, ...]
    output: int
    vjp: VJP


class ComputationRecord:
    """Ordered list of primitive nodes plus the set of differentiable leaves."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._leaves: dict[int, Tensor] = {}
        self._outputs: set[int] = set()

    def leaf(self, data, dtype=None) -> Tensor:
        """Create a tensor from *data* and mark it differentiable."""
        return self.mark(Tensor(data, dtype=dtype))

    def mark(self, tensor: Tensor) -> Tensor:
        self._leaves[tensor.id] = tensor
        return tensor

    @property
    def leaves(self) -> tuple[Tensor, ...]:
        return tuple(self._leaves.values())

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor.id in self._leaves or tensor.id in self._outputs

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> None:
        self.nodes.append(node)
        self._outputs.add(node.output)


def active_record() -> ComputationRecord | None:
    return getattr(_state, "active", None)


@contextmanager
def record() -> Iterator[ComputationRecord]:
    """Record primitives issued by this thread until the block exits."""
    rec = ComputationRecord()
    previous = active_record()
    _state.active = rec
    try:
        yield rec
    finally:
        _state.active = previous


def _emit(op: str, inputs: Sequence[Tensor], out: np.ndarray, vjp: VJP) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericalError(
            f"{op}: non-finite output for input shapes {[t.shape for t in inputs]}"
        )
    result = Tensor._wrap(out)
    rec = active_record()
    if rec is not None:
        rec._append(Node(op, tuple(t.id for t in inputs), result.id, vjp))
    return result


def backward(
    rec: ComputationRecord,
    loss: Tensor,
    leaves: Sequence[Tensor] | None = None,
) -> dict[Tensor, np.ndarray]:
    """
    Gradient of scalar *loss* for each leaf (default: every marked leaf of *rec*).

    Leaves the loss does not depend on get a zero gradient. The record is not modified,
    so repeated calls return identical results.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss not in rec:
        raise RecordError("backward: loss was not produced under this record")
    targets = rec.leaves if leaves is None else tuple(leaves)
    for t in targets:
        if t.id not in rec._leaves:
            raise RecordError(f"backward: {t!r} is not a leaf of this record")

    grads: dict[int, np.ndarray] = {loss.id: np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(rec.nodes):
        g = grads.get(node.output)
        if g is None:
            continue
        for in_id, in_grad in zip(node.inputs, node.vjp(g)):
            if in_grad is None:
                continue
            prev = grads.get(in_id)
            grads[in_id] = in_grad if prev is None else prev + in_grad

    out: dict[Tensor, np.ndarray] = {}
    for t in targets:
        g = grads.get(t.id)
        g = np.zeros(t.shape, dtype=t.dtype) if g is None else np.array(g, copy=True)
        out[t] = _freeze(g.reshape(t.shape))
    return out


# -- elementwise -----------------------------------------------------------


def _check_pair(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_pair("add", a, b)
    return _emit(
        "add",
        (a, b),
        a.data + b.data,
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_pair("sub", a, b)
    return _emit(
        "sub",
        (a, b),
        a.data - b.data,
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_pair("mul", a, b)
    return _emit(
        "mul",
        (a, b),
        a.data * b.data,
        lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)),
    )


def scale(x: Tensor, c: float) -> Tensor:
    factor = x.dtype.type(c)
    return _emit("scale", (x,), x.data * factor, lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit("relu", (x,), np.where(mask, x.data, 0).astype(x.dtype), lambda g: (g * mask,))


# -- linear algebra --------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _emit(
        "matmul",
        (a, b),
        a.data @ b.data,
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    if x.ndim < 2 or b.ndim != 1 or b.shape[0] != x.shape[1]:
        raise ShapeError(f"bias_add: bias {b.shape} does not fit axis 1 of {x.shape}")
    view = (1, b.shape[0]) + (1,) * (x.ndim - 2)
    axes = tuple(i for i in range(x.ndim) if i != 1)
    return _emit(
        "bias_add",
        (x, b),
        x.data + b.data.reshape(view),
        lambda g: (g, g.sum(axis=axes)),
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from e
    return _emit("reshape", (x,), out.copy(), lambda g: (g.reshape(x.shape),))


# -- convolution and pooling ----------------------------------------------


def _patches(x: np.ndarray, k: int) -> np.ndarray:
    """(N, C, H, W) -> (N*H*W, C*k*k) rows of zero-padded k x k neighbourhoods."""
    n, c, h, w = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * k * k)


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Cross-correlation of (N, C, H, W) input with (F, C, k, k) filters, same size out."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and filters, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    f, wc, kh, kw = w.shape
    if wc != c or kh != kw:
        raise ShapeError(f"conv2d: filters {w.shape} do not fit input {x.shape}")
    if kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel size must be odd, got {kh}")
    k = kh
    p = k // 2
    cols = _patches(x.data, k)
    wmat = w.data.reshape(f, c * k * k)
    out = (cols @ wmat.T).reshape(n, h, wd, f).transpose(0, 3, 1, 2)

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        g2 = g.transpose(0, 2, 3, 1).reshape(n * h * wd, f)
        dw = (g2.T @ cols).reshape(w.shape)
        dcols = (g2 @ wmat).reshape(n, h, wd, c, k, k)
        dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + h, j : j + wd] += dcols[:, :, :, :, i, j].transpose(
                    0, 3, 1, 2
                )
        return dxp[:, :, p : p + h, p : p + wd].copy(), dw

    return _emit("conv2d", (x, w), np.ascontiguousarray(out), vjp)


def maxpool2x2(x: Tensor) -> Tensor:
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"maxpool2x2: needs (N, C, even H, even W), got {x.shape}")
    n, c, h, w = x.shape
    win = (
        x.data.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    idx = win.argmax(axis=-1)[..., None]
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        scattered = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(scattered, idx, g[..., None], axis=-1)
        dx = (
            scattered.reshape(n, c, h // 2, w // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return (dx,)

    return _emit("maxpool2x2", (x,), out, vjp)


# -- reductions and loss ---------------------------------------------------


def mean_batch(x: Tensor) -> Tensor:
    if x.ndim == 0:
        raise ShapeError("mean_batch: input has no batch axis")
    n = x.shape[0]
    return _emit(
        "mean_batch",
        (x,),
        x.data.mean(axis=0),
        lambda g: (np.broadcast_to(g / x.dtype.type(n), x.shape).copy(),),
    )


def sum_all(x: Tensor) -> Tensor:
    return _emit(
        "sum_all",
        (x,),
        np.asarray(x.data.sum(), dtype=x.dtype),
        lambda g: (np.full(x.shape, g, dtype=x.dtype),),
    )


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """
    Per-example ``-log softmax(logits)[label]``.

    ``logits`` (N, K) with ``labels`` (N,) gives shape (N,); ``logits`` (K,) with a single
    integer label gives a 0-d scalar.
    """
    single = logits.ndim == 1
    z_in = logits.data[None, :] if single else logits.data
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if z_in.ndim != 2 or y.shape != (z_in.shape[0],):
        raise ShapeError(
            f"softmax_cross_entropy: logits {logits.shape} vs labels {np.shape(labels)}"
        )
    n, k = z_in.shape
    if np.any(y < 0) or np.any(y >= k):
        raise DomainError(f"softmax_cross_entropy: labels must lie in [0, {k})")
    z = z_in - z_in.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = (lse - z[rows, y]).astype(logits.dtype)
    probs = np.exp(z - lse[:, None])

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        d = probs.copy()
        d[rows, y] -= 1
        d = (d * g.reshape(n, 1)).astype(logits.dtype)
        return (d.reshape(logits.shape),)

    return _emit(
        "softmax_cross_entropy", (logits,), loss.reshape(()) if single else loss, vjp
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax (not recorded)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- numerical checks ------------------------------------------------------


def finite_diff_gradient(
    fn: Callable[[np.ndarray], float | Tensor],
    x: np.ndarray | Tensor,
    h: float = 1e-4,
) -> np.ndarray:
    """Central-difference estimate of d fn / d x, evaluated in 64-bit."""
    if h <= 0:
        raise DomainError(f"finite_diff_gradient: step must be positive, got {h}")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    grad = np.zeros_like(base)

    def _value(arr: np.ndarray) -> float:
        v = fn(arr)
        return v.item() if isinstance(v, Tensor) else float(np.asarray(v).reshape(()))

    for idx in np.ndindex(base.shape):
        orig = base[idx]
        base[idx] = orig + h
        up = _value(base.copy())
        base[idx] = orig - h
        down = _value(base.copy())
        base[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``, 0 when both vanish."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)
