"""Dense tensor arithmetic with reverse-mode automatic differentiation.

Tensors wrap numpy arrays (canonically rank-4 NCHW, but attention code also
uses rank-3 views).  Every differentiable op records its inputs and a
backward closure; ``backward()`` on a scalar loss walks the recorded graph
once in reverse topological order and accumulates gradients into the
``grad`` field of every leaf with ``requires_grad``.

Gradients accumulate across repeated backward calls; call ``zero_grad()``
(or :func:`zero_grads`) between steps.  ReLU's subgradient at exactly 0
is pinned to 0.  All computation is single-threaded numpy, so two backward
passes over the same graph produce bit-identical gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "grad_enabled",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul_batched",
    "softmax",
    "relu",
    "sigmoid",
    "log",
    "clamp",
    "concat_channels",
    "sum_all",
    "mean_all",
    "reshape",
    "transpose",
    "zero_grads",
    "gradcheck",
    "count_mult_adds",
    "tally_mult_adds",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


_grad_enabled = True
_flop_counter: list[int] | None = None


@contextlib.contextmanager
def count_mult_adds():
    """Count multiply-accumulates of matmul/conv/linear forwards in the block.

    Yields a single-element list; element 0 holds the running total.
    """
    global _flop_counter
    prev = _flop_counter
    holder = [0]
    _flop_counter = holder
    try:
        yield holder
    finally:
        _flop_counter = prev


def tally_mult_adds(n: int) -> None:
    if _flop_counter is not None:
        _flop_counter[0] += int(n)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A numpy array plus optional participation in the gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad = self.grad + g

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def mean(self) -> "Tensor":
        return mean_all(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- backward -----------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar; populates grads of requiring leaves."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        # grads of interior nodes, keyed by id; leaves accumulate into .grad
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and node._backward is None:
                node.accumulate_grad(g)
            if node._backward is not None:
                node._backward_dispatch(g, grads)

    def _backward_dispatch(self, g: np.ndarray, grads: dict[int, np.ndarray]) -> None:
        parent_grads = self._backward(g)
        for p, pg in zip(self._parents, parent_grads):
            if pg is None:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite input rejected")


# -- elementwise ops ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a (1, C, 1, 1) per-channel bias."""
    a, b = _as_tensor(a), _as_tensor(b)
    bias_bcast = False
    if a.shape != b.shape:
        if (
            a.data.ndim == 4
            and b.data.ndim == 4
            and b.shape[0] == 1
            and b.shape[2] == 1
            and b.shape[3] == 1
            and b.shape[1] == a.shape[1]
        ):
            bias_bcast = True
        else:
            raise ShapeError(f"add: incompatible shapes {a.shape} vs {b.shape}")
    data = a.data + b.data

    def backward(g):
        gb = g.sum(axis=(0, 2, 3), keepdims=True) if bias_bcast else g
        return g, gb

    return _result(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)

    def backward(g):
        return (g * s,)

    return _result(a.data * s, (a,), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} vs {b.shape}")

    def backward(g):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _result(np.where(mask, x.data, 0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # stable in both tails
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    y[~pos] = e / (1.0 + e)

    def backward(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), backward)


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise ValueError("log: non-positive input rejected")

    def backward(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), backward)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only strictly inside the interval."""
    x = _as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)

    def backward(g):
        return (g * inside,)

    return _result(np.clip(x.data, lo, hi), (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically-stabilized softmax over ``axis`` (rows sum to 1)."""
    x = _as_tensor(x)
    _check_finite("softmax", x.data)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((g - dot) * y,)

    return _result(y, (x,), backward)


# -- structural ops ----------------------------------------------------------


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels: rank-4 NCHW tensors required")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels: N/H/W mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]

    def backward(g):
        return g[:, :ca], g[:, ca:]

    return _result(np.concatenate([a.data, b.data], axis=1), (a, b), backward)


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g.reshape(()), shape).astype(x.dtype),)

    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.size
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g.reshape(()) / n, shape).astype(x.dtype),)

    return _result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _result(x.data.reshape(shape), (x,), backward)


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    inv = np.argsort(axes)

    def backward(g):
        return (g.transpose(inv),)

    return _result(x.data.transpose(axes), (x,), backward)


def matmul_batched(a: Tensor, b: Tensor) -> Tensor:
    """(B, M, K) @ (B, K, N) -> (B, M, N) with standard matmul backward."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ShapeError(f"matmul_batched: rank-3 operands required, got {a.shape} and {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"matmul_batched: incompatible shapes {a.shape} and {b.shape}")
    tally_mult_adds(a.shape[0] * a.shape[1] * a.shape[2] * b.shape[2])

    def backward(g):
        ga = np.matmul(g, b.data.transpose(0, 2, 1))
        gb = np.matmul(a.data.transpose(0, 2, 1), g)
        return ga, gb

    return _result(np.matmul(a.data, b.data), (a, b), backward)


# -- utilities ---------------------------------------------------------------


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords_per_input: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the given tensors to a scalar Tensor and must be deterministic.
    Inputs should be f64 for the documented tolerances to be meaningful.
    Relative error per coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    inputs = list(inputs)
    for x in inputs:
        if x.dtype != np.float64:
            raise ValueError("gradcheck requires f64 inputs")
        x.requires_grad = True
        x.zero_grad()
    loss = f(*inputs)
    loss.backward()
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]

    max_err = 0.0
    for x, an in zip(inputs, analytic):
        flat = x.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_coords_per_input is not None and flat.size > max_coords_per_input:
            gen = rng if rng is not None else np.random.default_rng(0)
            idxs = gen.choice(flat.size, size=max_coords_per_input, replace=False)
        an_flat = an.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            with no_grad():
                fp = f(*inputs).item()
            flat[i] = orig - eps
            with no_grad():
                fm = f(*inputs).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise ValueError(f"gradcheck: f non-finite at perturbed coordinate {i}")
            numeric = (fp - fm) / (2 * eps)
            a = an_flat[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            max_err = max(max_err, err)
    return max_err
