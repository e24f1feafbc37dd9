"""Dense float64 tensors with reverse-mode differentiation on a tape.

Implements just the primitives the caption network needs: matrix products,
broadcasting arithmetic, gate nonlinearities, row-wise softmax, reductions,
concatenation, and row slicing/selection.  Ops executed inside a
``with Tape():`` block are recorded in execution order (hence already in
topological order); :meth:`Tape.backward` replays them once in reverse.
Outside a tape the same functions run as plain forward computations.

Gradients accumulate into ``Tensor.grad``, so several backward passes (one
per record of a mini-batch, say) sum naturally; callers reset ``grad`` to
``None`` between optimizer steps.
"""

from __future__ import annotations

import threading
from collections.abc import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "NumericError",
    "Tensor",
    "Tape",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "tanh",
    "sigmoid",
    "log",
    "softmax",
    "elementwise",
    "sum",
    "mean",
    "concat",
    "transpose",
    "slice_rows",
    "take_per_row",
    "gradient_check",
]

_builtin_sum = sum


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


_thread = threading.local()


def _active_tape():
    return getattr(_thread, "tape", None)


class Tensor:
    """A C-contiguous float64 array plus an accumulated gradient."""

    __slots__ = ("data", "grad")

    def __init__(self, data) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:  # ascontiguousarray would promote 0-d to 1-d
            arr = np.ascontiguousarray(arr)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return self.data.item()

    def accumulate_grad(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    """Wrap arrays/scalars as constant tensors; pass tensors through."""
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Execution-ordered record of primitives for one forward pass.

    A tape and the tensors flowing through it are a single-threaded unit of
    work; distinct tapes may run concurrently on distinct threads.
    """

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, Callable]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("another tape is already recording on this thread")
        _thread.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _thread.tape = None

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, output: Tensor) -> None:
        """Push d(output)/d(node) back through the recorded ops, newest first.

        ``output`` must be scalar.  Each node is visited exactly once; leaf
        gradients accumulate in ``Tensor.grad``.  Calling backward twice on
        the same tape doubles the gradients, so don't.
        """
        if output.data.shape != ():
            raise DimensionError(
                f"backward needs a scalar output, got shape {output.data.shape}"
            )
        output.accumulate_grad(np.ones(()))
        for out, backward_fn in reversed(self._nodes):
            g = out.grad
            if g is not None:
                backward_fn(g)


def _record(out: Tensor, backward_fn: Callable) -> None:
    tape = _active_tape()
    if tape is not None:
        tape._nodes.append((out, backward_fn))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul of shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward(g, a=a, b=b):
        a.accumulate_grad(g @ b.data.T)
        b.accumulate_grad(a.data.T @ g)

    _record(out, backward)
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError as exc:
        raise DimensionError(f"add of shapes {a.shape} and {b.shape}") from exc

    def backward(g, a=a, b=b):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(g, b.data.shape))

    _record(out, backward)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data - b.data)
    except ValueError as exc:
        raise DimensionError(f"sub of shapes {a.shape} and {b.shape}") from exc

    def backward(g, a=a, b=b):
        a.accumulate_grad(_unbroadcast(g, a.data.shape))
        b.accumulate_grad(_unbroadcast(-g, b.data.shape))

    _record(out, backward)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError as exc:
        raise DimensionError(f"mul of shapes {a.shape} and {b.shape}") from exc

    def backward(g, a=a, b=b):
        a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    _record(out, backward)
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.tanh(x.data))

    def backward(g, x=x, y=out.data):
        x.accumulate_grad(g * (1.0 - y * y))

    _record(out, backward)
    return out


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = Tensor(_stable_sigmoid(np.atleast_1d(x.data)).reshape(x.data.shape))

    def backward(g, x=x, y=out.data):
        x.accumulate_grad(g * y * (1.0 - y))

    _record(out, backward)
    return out


def log(x) -> Tensor:
    """Natural log; the input must be positive wherever the result is used."""
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.log(x.data))

    def backward(g, x=x):
        x.accumulate_grad(g / x.data)

    _record(out, backward)
    return out


def softmax(x) -> Tensor:
    """Softmax along the last axis, with max subtraction for overflow safety."""
    x = as_tensor(x)
    if x.data.ndim < 1 or x.data.shape[-1] < 1:
        raise DimensionError(f"softmax needs at least one entry, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward(g, x=x, y=out.data):
        x.accumulate_grad(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    _record(out, backward)
    return out


def elementwise(kind: str, *inputs) -> Tensor:
    """Dispatch by name to one of the pointwise primitives."""
    try:
        fn = {"tanh": tanh, "sigmoid": sigmoid, "add": add, "mul": mul}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*inputs)


def sum(x) -> Tensor:  # noqa: A001 - mirrors np.sum naming
    """Full reduction to a scalar."""
    x = as_tensor(x)
    out = Tensor(x.data.sum())

    def backward(g, x=x):
        x.accumulate_grad(g)

    _record(out, backward)
    return out


def mean(x) -> Tensor:
    x = as_tensor(x)
    return mul(sum(x), 1.0 / x.data.size)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of zero tensors")
    try:
        out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    except ValueError as exc:
        raise DimensionError(f"concat along axis {axis}: {exc}") from exc
    sizes = [p.data.shape[axis] for p in parts]

    def backward(g, parts=parts, sizes=sizes, axis=axis):
        offset = 0
        index: list = [slice(None)] * g.ndim
        for p, size in zip(parts, sizes):
            index[axis] = slice(offset, offset + size)
            p.accumulate_grad(g[tuple(index)])
            offset += size

    _record(out, backward)
    return out


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"transpose needs a rank-2 tensor, got shape {x.shape}")
    out = Tensor(x.data.T)

    def backward(g, x=x):
        x.accumulate_grad(g.T)

    _record(out, backward)
    return out


def slice_rows(x, start: int, stop: int) -> Tensor:
    """Rows [start, stop) of a rank-2 tensor."""
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"slice_rows needs a rank-2 tensor, got shape {x.shape}")
    out = Tensor(x.data[start:stop])

    def backward(g, x=x, start=start, stop=stop):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[start:stop] += g

    _record(out, backward)
    return out


def take_per_row(x, indices) -> Tensor:
    """Entry ``x[i, indices[i]]`` for every row i, as a vector."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    if x.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != x.data.shape[0]:
        raise DimensionError(
            f"take_per_row of shape {x.shape} with {idx.shape[0] if idx.ndim == 1 else '?'} indices"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[1]):
        raise IndexError(f"target index out of range for {x.data.shape[1]} columns")
    rows = np.arange(idx.shape[0])
    out = Tensor(x.data[rows, idx])

    def backward(g, x=x, rows=rows, idx=idx):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[rows, idx] += g

    _record(out, backward)
    return out


def gradient_check(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Compare tape gradients of the scalar computation ``f()`` against
    central differences over every element of ``params``.

    Returns ``max_i |analytic_i - central_i| / max(|analytic_i|, |central_i|, 1e-12)``
    with ``central_i = (f(p + eps*e_i) - f(p - eps*e_i)) / (2*eps)``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        out = f()
    if not isinstance(out, Tensor) or out.data.shape != ():
        raise DimensionError("gradient_check needs a scalar-valued computation")
    if not np.isfinite(out.data):
        raise NumericError("non-finite value in forward pass")
    tape.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            saved = flat[j]
            flat[j] = saved + eps
            hi = float(f().data)
            flat[j] = saved - eps
            lo = float(f().data)
            flat[j] = saved
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NumericError("non-finite value while perturbing parameters")
            central = (hi - lo) / (2.0 * eps)
            err = abs(gflat[j] - central) / max(abs(gflat[j]), abs(central), 1e-12)
            if err > worst:
                worst = err
    return worst
