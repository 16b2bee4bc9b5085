"""Dense float tensors with reverse-mode automatic differentiation.

Everything else in the package computes on these tensors. Storage is
row-major numpy, float32 by default with float64 available for
verification work. Each operation that can propagate gradients records a
node holding its inputs and a local gradient rule; `backward` replays the
recorded nodes once, in reverse topological order. A recording is
single-use: running backward a second time through any already-consumed
node raises `TapeReuseError`.

Shape checking is strict. The only broadcast allowed is adding a bias
vector over the rows of a matrix; every other mismatch raises
`ShapeError` naming both shapes.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class ContractError(ValueError):
    """An operation was called outside its stated contract."""


class TapeReuseError(RuntimeError):
    """A recorded computation was backpropagated more than once."""


class NumericError(ArithmeticError):
    """Non-finite values where the contract requires finite ones."""


class _Node:
    """One recorded operation: parent tensors plus a local gradient rule.

    `grad_fn` maps the gradient at the output to a tuple of gradients
    aligned with `parents` (entries may be None for constant parents).
    """

    __slots__ = ("parents", "grad_fn", "consumed")

    def __init__(self, parents: tuple["Tensor", ...], grad_fn: Callable):
        self.parents = parents
        self.grad_fn = grad_fn
        self.consumed = False


class Tensor:
    """Dense multi-dimensional float array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Operator sugar; Tensor operands only, no implicit scalar promotion.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._node = _Node(parents, grad_fn)
    return out


def _check_finite(name: str, x: Tensor) -> None:
    if not np.all(np.isfinite(x.data)):
        raise NumericError(f"{name}: input contains non-finite values")


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), grad_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a bias vector broadcast over matrix rows."""
    if a.shape == b.shape:
        def grad_fn(g):
            return (g if a.requires_grad else None,
                    g if b.requires_grad else None)
        return _result(a.data + b.data, (a, b), grad_fn)
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        def grad_fn(g):
            return (g if a.requires_grad else None,
                    g.sum(axis=0) if b.requires_grad else None)
        return _result(a.data + b.data, (a, b), grad_fn)
    raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def grad_fn(g):
        return (g if a.requires_grad else None,
                -g if b.requires_grad else None)

    return _result(a.data - b.data, (a, b), grad_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def grad_fn(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return _result(a.data * b.data, (a, b), grad_fn)


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Dispatch form of the pointwise ops: op in {"add", "sub", "mul"}."""
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[op]
    except KeyError:
        raise ContractError(f"elementwise: unknown op {op!r}") from None
    return fn(a, b)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    c = float(c)

    def grad_fn(g):
        return (g * c,)

    return _result(x.data * c, (x,), grad_fn)


def sigmoid(x: Tensor) -> Tensor:
    _check_finite("sigmoid", x)
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-x.data))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _result(out, (x,), grad_fn)


def tanh(x: Tensor) -> Tensor:
    _check_finite("tanh", x)
    out = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return _result(out, (x,), grad_fn)


def relu(x: Tensor) -> Tensor:
    _check_finite("relu", x)
    out = np.maximum(x.data, 0)

    def grad_fn(g):
        return (g * (x.data > 0),)

    return _result(out, (x,), grad_fn)


def activation(kind: str, x: Tensor) -> Tensor:
    """Dispatch form: kind in {"sigmoid", "tanh", "relu"}."""
    try:
        fn = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu}[kind]
    except KeyError:
        raise ContractError(f"activation: unknown kind {kind!r}") from None
    return fn(x)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, max-subtracted for stability."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows: expected 2-D tensor, got {x.shape}")
    _check_finite("softmax_rows", x)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (x,), grad_fn)


def concat(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the last axis; all leading axes must agree."""
    if a.data.ndim != b.data.ndim or a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: incompatible shapes {a.shape} and {b.shape}")
    p = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)

    def grad_fn(g):
        return (g[..., :p] if a.requires_grad else None,
                g[..., p:] if b.requires_grad else None)

    return _result(out, (a, b), grad_fn)


def vstack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors along axis 0 (graph-aware row concatenation)."""
    if not tensors:
        raise ShapeError("vstack: empty input")
    cols = tensors[0].shape[-1]
    for t in tensors:
        if t.data.ndim != 2 or t.shape[1] != cols:
            raise ShapeError(f"vstack: inconsistent shape {t.shape}")
    counts = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + counts)
    out = np.concatenate([t.data for t in tensors], axis=0)

    def grad_fn(g):
        return tuple(
            g[offsets[i]:offsets[i + 1]] if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return _result(out, tuple(tensors), grad_fn)


def mean_axis(x: Tensor, axis: int = 0) -> Tensor:
    """Mean over the rows of a 2-D tensor.

    Summation is done in canonical (sorted) order per column so the result
    is bit-identical under any row permutation of the input.
    """
    if axis != 0:
        raise ContractError("mean_axis: only axis=0 is supported")
    if x.data.ndim != 2:
        raise ShapeError(f"mean_axis: expected 2-D tensor, got {x.shape}")
    n = x.shape[0]
    if n == 0:
        raise ShapeError("mean_axis: empty reduction over zero rows")
    out = np.sort(x.data, axis=0).sum(axis=0) / n

    def grad_fn(g):
        return (np.tile(g / n, (n, 1)),)

    return _result(out, (x,), grad_fn)


def sum_all(x: Tensor) -> Tensor:
    """Sum of all entries, returned as a scalar tensor."""
    out = x.data.sum()

    def grad_fn(g):
        return (np.full(x.shape, g, dtype=x.data.dtype),)

    return _result(np.asarray(out), (x,), grad_fn)


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return _result(out, (x,), grad_fn)


def clamp_min(x: Tensor, lo: float) -> Tensor:
    """Elementwise max(x, lo); gradient passes only where x > lo."""
    out = np.maximum(x.data, lo)

    def grad_fn(g):
        return (g * (x.data > lo),)

    return _result(out, (x,), grad_fn)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D tensor, got {x.shape}")

    def grad_fn(g):
        return (g.T,)

    return _result(x.data.T, (x,), grad_fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.size:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}")

    def grad_fn(g):
        return (g.reshape(x.shape),)

    return _result(x.data.reshape(shape), (x,), grad_fn)


def take_row(x: Tensor, i: int) -> Tensor:
    """Row i of a 2-D tensor as a (1, cols) tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"take_row: expected 2-D tensor, got {x.shape}")
    if not 0 <= i < x.shape[0]:
        raise ShapeError(f"take_row: row {i} out of range for {x.shape}")
    out = x.data[i:i + 1].copy()

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[i:i + 1] = g
        return (full,)

    return _result(out, (x,), grad_fn)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) of a 2-D tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"slice_rows: expected 2-D tensor, got {x.shape}")
    if not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: range [{start}, {stop}) out of bounds for {x.shape}")
    out = x.data[start:stop].copy()

    def grad_fn(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _result(out, (x,), grad_fn)


def broadcast_scalar(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Spread a single-element tensor to `shape`; gradient sums back."""
    if x.size != 1:
        raise ShapeError(f"broadcast_scalar: expected single element, got {x.shape}")
    out = np.full(shape, x.data.reshape(-1)[0], dtype=x.data.dtype)

    def grad_fn(g):
        return (np.asarray(g.sum(), dtype=x.data.dtype).reshape(x.shape),)

    return _result(out, (x,), grad_fn)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: surviving entries scaled by 1/(1-rate) at train time.

    Inference (training=False) is the identity and returns the input tensor.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout: rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout: rng required when training with rate > 0")
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / keep

    def grad_fn(g):
        return (g * mask,)

    return _result(x.data * mask, (x,), grad_fn)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Propagate gradients from a scalar loss to every requires_grad tensor.

    Gradients accumulate (+=) both across fan-out within this pass and onto
    any .grad already present from earlier passes, so per-sample losses can
    be backpropagated one at a time and summed. The visited recording is
    consumed; a second backward through it raises TapeReuseError.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not require gradients")

    # Iterative post-order DFS; graphs routinely exceed the recursion limit.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            if t._node.consumed:
                raise TapeReuseError("backward: this recording was already backpropagated")
            for p in t._node.parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        t.grad = g if t.grad is None else t.grad + g
        node = t._node
        if node is None:
            continue
        node.consumed = True
        for p, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg


# ---------------------------------------------------------------------------
# gradient verification


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of f at x and
    central finite differences.

    The analytic gradient is computed in x's own precision (that is the
    code path under test); the differences are evaluated with float64
    inputs, which the quotient needs for headroom regardless of the mode
    being checked. f must be scalar-valued and deterministic; determinism
    is probed by evaluating twice.
    """
    probe = f(Tensor(x.data.copy()))
    if probe.data.size != 1:
        raise ContractError(f"finite_diff_check: f must be scalar-valued, got {probe.shape}")
    if not np.array_equal(probe.data, f(Tensor(x.data.copy())).data):
        raise ContractError("finite_diff_check: f is not deterministic")

    xt = Tensor(x.data.copy(), requires_grad=True)
    backward(f(xt))
    analytic = np.zeros(x.shape, dtype=np.float64) if xt.grad is None else xt.grad.astype(np.float64)

    base = x.data.astype(np.float64)
    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(Tensor(base.copy())).data.reshape(-1)[0])
        flat[i] = orig - eps
        fm = float(f(Tensor(base.copy())).data.reshape(-1)[0])
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
