"""Reverse-mode autodiff over numpy arrays with an explicit tape.

A Tensor wraps one ndarray plus an optional grad of the same shape.
Primitives compute eagerly and, when any input requires grad and a Tape is
active, append a backward closure to that tape.  backward() replays the tape
in reverse (the tape is already in topological order by construction) and
accumulates grads additively until they are explicitly zeroed.

float32 is the training default; gradient checking is meant to run on
float64 tensors.  Mixed-dtype arithmetic is rejected rather than silently
promoted.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, OracleError, ShapeError, TapeReuseError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # small amount of operator sugar, everything routes through the primitives
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def param(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; primitives executed inside the block are
    recorded when any of their inputs requires grad.  A tape can be replayed
    by backward() exactly once.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        self.entries.append((out, inputs, backward_fn))

    def __len__(self):
        return len(self.entries)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _finish(kind: str, out_data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    # every primitive output must be finite, a NaN/Inf here is an error state
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"{kind}: non-finite output")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_dtype(kind: str, a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ContractError(f"{kind}: mixed dtypes {a.data.dtype} and {b.data.dtype}")


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """a (n,k) @ b (k,m) -> (n,m)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def backward_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _finish("matmul", a.data @ b.data, (a, b), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise same-shape add, or bias-add of b (m,) onto a (n,m)."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_dtype("add", a, b)
    bias = a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    if not bias and a.data.shape != b.data.shape:
        raise ShapeError("add", a.shape, b.shape)

    def backward_fn(g):
        return g, (g.sum(axis=0) if bias else g)

    return _finish("add", a.data + b.data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_dtype("sub", a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError("sub", a.shape, b.shape)

    def backward_fn(g):
        return g, -g

    return _finish("sub", a.data - b.data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product, shapes must match exactly."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_dtype("mul", a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError("mul", a.shape, b.shape)

    def backward_fn(g):
        return g * b.data, g * a.data

    return _finish("mul", a.data * b.data, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    a = _as_tensor(a)
    c = float(c)

    def backward_fn(g):
        return (g * c,)

    return _finish("scale", a.data * c, (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError below
        out_data = np.exp(a.data)

    def backward_fn(g):
        return (g * out_data,)

    return _finish("exp", out_data, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)

    def backward_fn(g):
        return (g / a.data,)

    return _finish("log", out_data, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0  # subgradient convention: relu'(0) = 0

    def backward_fn(g):
        return (g * mask,)

    return _finish("relu", np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out_data = out_data.astype(x.dtype)

    def backward_fn(g):
        return (g * out_data * (1.0 - out_data),)

    return _finish("sigmoid", out_data, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward_fn(g):
        return (g * (1.0 - out_data * out_data),)

    return _finish("tanh", out_data, (a,), backward_fn)


def _softmax_data(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)  # for numerical stability
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    a = _as_tensor(a)
    out_data = _softmax_data(a.data)

    def backward_fn(g):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        return (out_data * (g - inner),)

    return _finish("softmax", out_data, (a,), backward_fn)


def log_softmax(a: Tensor) -> Tensor:
    """Log-softmax along the last axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out_data = shifted - lse

    def backward_fn(g):
        soft = np.exp(out_data)
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _finish("log_softmax", out_data, (a,), backward_fn)


def gather(a: Tensor, index) -> Tensor:
    """Pick entries along the last axis.

    a (V,) with scalar index -> scalar; a (T,V) with index (T,) -> (T,).
    The index operand carries no gradient.
    """
    a = _as_tensor(a)
    idx = np.asarray(index)
    if a.data.ndim == 1:
        if idx.ndim != 0:
            raise ShapeError("gather", a.shape, idx.shape)
        out_data = a.data[int(idx)].reshape(())

        def backward_fn(g):
            ga = np.zeros_like(a.data)
            ga[int(idx)] = g
            return (ga,)

    elif a.data.ndim == 2:
        if idx.shape != (a.data.shape[0],):
            raise ShapeError("gather", a.shape, idx.shape)
        rows = np.arange(a.data.shape[0])
        out_data = a.data[rows, idx]

        def backward_fn(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, (rows, idx), g)
            return (ga,)

    else:
        raise ShapeError("gather", a.shape, idx.shape)
    return _finish("gather", out_data, (a,), backward_fn)


def tsum(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum over all elements (axis=None) or one axis."""
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def backward_fn(g):
        if axis is None:
            return (np.full_like(a.data, 1.0) * g,)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(),)

    return _finish("sum", out_data, (a,), backward_fn)


def tmean(a: Tensor, axis: int | None = None) -> Tensor:
    """Mean over all elements (axis=None) or one axis."""
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    out_data = a.data.mean(axis=axis)

    def backward_fn(g):
        if axis is None:
            return (np.full_like(a.data, 1.0) * (g / n),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy() / n,)

    return _finish("mean", out_data, (a,), backward_fn)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise ContractError("concat: empty input list")
    for p in parts[1:]:
        _check_same_dtype("concat", parts[0], p)
    try:
        out_data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.shape for p in parts])
    sizes = [p.data.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _finish("concat", out_data, parts, backward_fn)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, tuple(shape))

    def backward_fn(g):
        return (g.reshape(a.data.shape),)

    return _finish("reshape", out_data, (a,), backward_fn)


def transpose(a: Tensor) -> Tensor:
    """2-D transpose."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose", a.shape)

    def backward_fn(g):
        return (g.T,)

    return _finish("transpose", a.data.T.copy(), (a,), backward_fn)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup: table (V,d), ids int (T,) -> (T,d)."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if table.data.ndim != 2 or ids.ndim != 1:
        raise ShapeError("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ContractError(f"embedding: id out of range for table with {table.data.shape[0]} rows")
    out_data = table.data[ids]

    def backward_fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _finish("embedding", out_data, (table,), backward_fn)


_PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "exp": exp,
    "log": log,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "gather": gather,
    "sum": tsum,
    "mean": tmean,
    "concat": concat,
    "reshape": reshape,
    "transpose": transpose,
    "embedding": embedding,
}


def apply_primitive(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by kind name; unknown kinds are contract errors."""
    if kind not in _PRIMITIVES:
        raise ContractError(f"unknown primitive kind {kind!r}")
    return _PRIMITIVES[kind](*inputs, **kwargs)


def primitive_kinds() -> list[str]:
    return sorted(_PRIMITIVES)


# ------------------------------------------------------- composed helpers


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """clip(a) = lo + relu(a-lo) - relu(a-hi), built from primitives.

    Subgradient is 0 outside [lo, hi] and 1 inside, matching the relu
    convention at the boundaries.
    """
    lo_t = constant(np.full(a.shape, lo, dtype=a.data.dtype))
    hi_t = constant(np.full(a.shape, hi, dtype=a.data.dtype))
    return add(lo_t, sub(relu(sub(a, lo_t)), relu(sub(a, hi_t))))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """min(a,b) = a - relu(a-b), elementwise."""
    return sub(a, relu(sub(a, b)))


# ---------------------------------------------------------------- backward


def backward(loss: Tensor, tape: Tape) -> None:
    """Replay the tape in reverse, accumulating grads into .grad slots.

    loss must be a scalar recorded on this tape; the tape is consumed and a
    second replay raises TapeReuseError.
    """
    if tape.consumed:
        raise TapeReuseError("tape already consumed")
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape.consumed = True
    loss.accumulate_grad(np.ones_like(loss.data))
    for out, inputs, backward_fn in reversed(tape.entries):
        if out.grad is None:
            continue
        grads = backward_fn(out.grad)
        for t, g in zip(inputs, grads):
            if t.requires_grad and g is not None:
                if not np.all(np.isfinite(g)):
                    raise NumericError("backward: non-finite gradient")
                t.accumulate_grad(g)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def check_gradients(f, x: Tensor, eps: float = 1e-5) -> float:
    """Compare tape gradients of scalar f(x) against central differences.

    Returns the max over coordinates of |analytic - cd| / max(1, |analytic|).
    f is probed twice up front; any nondeterminism is an OracleError since
    the finite-difference reference would be invalid.
    """
    x.requires_grad = True
    y0 = f(x)
    y1 = f(x)
    if y0.data.tobytes() != y1.data.tobytes():
        raise OracleError("probe function is not deterministic")
    if y0.data.size != 1:
        raise ContractError("check_gradients: f must return a scalar")

    x.grad = None
    with Tape() as tape:
        y = f(x)
    backward(y, tape)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        y_hi = f(x).item()
        flat[i] = keep - eps
        y_lo = f(x).item()
        flat[i] = keep
        cd = (y_hi - y_lo) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        err = abs(a - cd) / max(1.0, abs(a))
        worst = max(worst, err)
    return worst
