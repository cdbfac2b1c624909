"""Dense float64 tensors with tape-based reverse-mode differentiation.

Design rules:
  - tensors are treated as immutable once constructed;
  - no implicit broadcasting — shapes must match exactly, with explicit
    row-vector ops (add_rowvec, mul_rowvec) for bias/affine patterns;
  - every op checks its output for NaN/Inf;
  - ops record onto the thread's active Tape (if any); replaying the tape
    in reverse visits each op exactly once in reverse topological order
    and accumulates gradients into ``.grad``.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError

_STATE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    """Contiguous row-major float64 array, optionally carrying a gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # Copy on first write: g may alias an upstream grad buffer.
    if t.grad is None:
        t.grad = np.array(g)
    else:
        t.grad += g


class Tape:
    """Execution-ordered record of primitive ops for one backward pass."""

    def __init__(self) -> None:
        self._ops: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _STATE.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _STATE.tape = None

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._ops.append((out, backward))

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss) = 1 and replay ops in reverse order."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self._ops):
            if out.grad is not None:
                backward_fn(out.grad)


def _make(op: str, value: np.ndarray, backward: Callable[[np.ndarray], None]) -> Tensor:
    _check_finite(value, op)
    out = Tensor.__new__(Tensor)
    out.data = value if value.flags["C_CONTIGUOUS"] else np.ascontiguousarray(value)
    out.grad = None
    tape = _active_tape()
    if tape is not None:
        tape.record(out, backward)
    return out


def _require_shape(t: Tensor, rank: int, op: str) -> None:
    if t.data.ndim != rank:
        raise ValueError(f"{op} expects rank-{rank} input, got shape {t.data.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_shape(a, 2, "matmul")
    _require_shape(b, 2, "matmul")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    value = a.data @ b.data

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make("matmul", value, backward)


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op} shape mismatch: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _make("add", a.data + b.data, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make("sub", a.data - b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")

    def backward(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make("mul", a.data * b.data, backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * c)

    return _make("scale", x.data * c, backward)


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an (m, n) matrix."""
    _require_shape(x, 2, "add_rowvec")
    _require_shape(v, 1, "add_rowvec")
    if x.data.shape[1] != v.data.shape[0]:
        raise ValueError(f"add_rowvec shape mismatch: {x.data.shape} + {v.data.shape}")

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g)
        _accumulate(v, g.sum(axis=0))

    return _make("add_rowvec", x.data + v.data[np.newaxis, :], backward)


def mul_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Scale every row of an (m, n) matrix elementwise by a length-n vector."""
    _require_shape(x, 2, "mul_rowvec")
    _require_shape(v, 1, "mul_rowvec")
    if x.data.shape[1] != v.data.shape[0]:
        raise ValueError(f"mul_rowvec shape mismatch: {x.data.shape} * {v.data.shape}")

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * v.data[np.newaxis, :])
        _accumulate(v, (g * x.data).sum(axis=0))

    return _make("mul_rowvec", x.data * v.data[np.newaxis, :], backward)


def transpose(x: Tensor) -> Tensor:
    _require_shape(x, 2, "transpose")

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g.T)

    return _make("transpose", x.data.T.copy(), backward)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ValueError("concat needs at least one tensor")
    rank = parts[0].data.ndim
    for p in parts:
        if p.data.ndim != rank:
            raise ValueError("concat rank mismatch")
    if not 0 <= axis < rank:
        raise ValueError(f"concat axis {axis} out of range for rank {rank}")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g: np.ndarray) -> None:
        for p, start, stop in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * rank
            index[axis] = slice(start, stop)
            _accumulate(p, g[tuple(index)])

    return _make("concat", np.concatenate([p.data for p in parts], axis=axis), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) of a matrix (or leading entries of a vector)."""
    if x.data.ndim == 0:
        raise ValueError("slice_rows needs rank >= 1")
    n = x.data.shape[0]
    if not (0 <= start < stop <= n):
        raise ValueError(f"slice_rows [{start}:{stop}] out of range for {n} rows")

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[start:stop] = g
        _accumulate(x, full)

    return _make("slice_rows", x.data[start:stop].copy(), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * mask)

    return _make("relu", np.where(mask, x.data, 0.0), backward)


def sigmoid(x: Tensor) -> Tensor:
    # exp(-|x|) never overflows, so both branches are safe.
    e = np.exp(-np.abs(x.data))
    value = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def backward(g: np.ndarray) -> None:
        _accumulate(x, g * value * (1.0 - value))

    return _make("sigmoid", value, backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a matrix."""
    _require_shape(x, 2, "softmax_rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        dot = (g * value).sum(axis=1, keepdims=True)
        _accumulate(x, (g - dot) * value)

    return _make("softmax_rows", value, backward)


def layer_norm_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize each row to zero mean / unit variance (no affine)."""
    _require_shape(x, 2, "layer_norm_rows")
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    value = centered * inv

    def backward(g: np.ndarray) -> None:
        g_mean = g.mean(axis=1, keepdims=True)
        gy_mean = (g * value).mean(axis=1, keepdims=True)
        _accumulate(x, inv * (g - g_mean - value * gy_mean))

    return _make("layer_norm_rows", value, backward)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    """Mean over one axis (the axis is removed)."""
    if not 0 <= axis < x.data.ndim:
        raise ValueError(f"mean_axis axis {axis} out of range for shape {x.data.shape}")
    n = x.data.shape[axis]

    def backward(g: np.ndarray) -> None:
        expanded = np.expand_dims(g / n, axis)
        _accumulate(x, np.broadcast_to(expanded, x.data.shape).copy())

    return _make("mean_axis", x.data.mean(axis=axis), backward)


def squared_error(pred: Tensor, target) -> Tensor:
    """Scalar sum of squared differences against a constant target."""
    t = np.asarray(target, dtype=np.float64)
    if t.shape != pred.data.shape:
        raise ValueError(f"squared_error shape mismatch: {pred.data.shape} vs {t.shape}")
    diff = pred.data - t

    def backward(g: np.ndarray) -> None:
        _accumulate(pred, 2.0 * diff * g)

    return _make("squared_error", np.asarray((diff**2).sum()), backward)
