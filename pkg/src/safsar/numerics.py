"""Dense tensors, forward ops, and reverse-mode gradients on an explicit tape.

Values are numpy arrays in row-major order. Ops record a vector-Jacobian
closure on the active ``GradTape`` whenever some input requires gradients;
with no active tape every op is a pure forward evaluation, which is what the
finite-difference probes in ``grad_check`` rely on.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    ContractError,
    DomainError,
    NonDeterministicError,
    ShapeError,
    StaleTapeError,
)

DTYPES = {"single": np.float32, "double": np.float64}

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A dense array of real scalars, optionally tracked for gradients.

    Tensors are immutable after construction except through optimizer updates
    and gradient-check probes, which mutate ``data`` in place.
    """

    __slots__ = ("data", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._tape = None  # (tape, generation) set when an op output

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def to_array(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # arithmetic sugar; scalars stay python floats so float32 data is not promoted
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


# ---------------------------------------------------------------------------
# tape machinery
# ---------------------------------------------------------------------------

_ACTIVE = threading.local()


def _tape_stack() -> list:
    stack = getattr(_ACTIVE, "stack", None)
    if stack is None:
        stack = []
        _ACTIVE.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """Records ops in execution order; ``backward`` replays them once, reversed.

    Use as a context manager around the forward pass. Tapes on different
    threads are independent; nesting on one thread uses the innermost tape.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._generation = 0
        self.gradients: dict[Tensor, np.ndarray] | None = None

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def reset(self) -> None:
        """Drop all records; tensors produced before the reset become stale."""
        self._records.clear()
        self._generation += 1
        self.gradients = None


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> None:
    if not out.requires_grad:
        return
    tape = _active_tape()
    if tape is None:
        return
    for t in inputs:
        token = t._tape
        if token is not None and (token[0] is not tape or token[1] != tape._generation):
            raise StaleTapeError(
                f"tensor {t!r} was produced under a different or reset tape"
            )
    out._tape = (tape, tape._generation)
    tape._records.append((out, inputs, vjp))


def backward(tape: GradTape, loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Accumulate dLoss/dt for every requires_grad tensor reachable from loss.

    Gradients add across fan-out; tensors that do not require gradients are
    never materialized in the returned map.
    """
    if loss.shape != ():
        raise ContractError(f"loss must be a scalar tensor, got shape {loss.shape}")
    token = loss._tape
    if token is None:
        raise ContractError("loss was not produced by any recorded op")
    if token[0] is not tape or token[1] != tape._generation:
        raise StaleTapeError("loss belongs to a different or reset tape")

    grads: dict[Tensor, np.ndarray] = {loss: np.ones((), dtype=loss.dtype)}
    for out, inputs, vjp in reversed(tape._records):
        g = grads.get(out)
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if gi is None or not t.requires_grad:
                continue
            acc = grads.get(t)
            grads[t] = gi if acc is None else acc + gi
    tape.gradients = grads
    return grads


# ---------------------------------------------------------------------------
# forward ops with gradient rules
# ---------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting; either side may be a scalar."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

        def vjp(g):
            return (
                _unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None,
            )

        _record(out, (a, b), vjp)
        return out
    if isinstance(a, Tensor):
        c = float(b)
        out = Tensor(a.data + c, requires_grad=a.requires_grad)
        _record(out, (a,), lambda g: (_unbroadcast(g, a.shape),))
        return out
    return add(b, a)


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)

        def vjp(g):
            return (
                _unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None,
            )

        _record(out, (a, b), vjp)
        return out
    if isinstance(a, Tensor):
        out = Tensor(a.data - float(b), requires_grad=a.requires_grad)
        _record(out, (a,), lambda g: (_unbroadcast(g, a.shape),))
        return out
    out = Tensor(float(a) - b.data, requires_grad=b.requires_grad)
    _record(out, (b,), lambda g: (_unbroadcast(-g, b.shape),))
    return out


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting; either side may be a scalar."""
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

        def vjp(g):
            return (
                _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
            )

        _record(out, (a, b), vjp)
        return out
    if isinstance(a, Tensor):
        c = float(b)
        out = Tensor(a.data * c, requires_grad=a.requires_grad)
        _record(out, (a,), lambda g: (_unbroadcast(g * c, a.shape),))
        return out
    return mul(b, a)


def div(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        out = Tensor(a.data / b.data, requires_grad=a.requires_grad or b.requires_grad)

        def vjp(g):
            ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
            gb = (
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
                if b.requires_grad
                else None
            )
            return ga, gb

        _record(out, (a, b), vjp)
        return out
    if isinstance(a, Tensor):
        c = float(b)
        out = Tensor(a.data / c, requires_grad=a.requires_grad)
        _record(out, (a,), lambda g: (_unbroadcast(g / c, a.shape),))
        return out
    c = float(a)
    out = Tensor(c / b.data, requires_grad=b.requires_grad)
    _record(out, (b,), lambda g: (_unbroadcast(-g * c / (b.data * b.data), b.shape),))
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, requires_grad=a.requires_grad)
    _record(out, (a,), lambda g: (-g,))
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """C[i,j] = sum_t A[i,t] B[t,j] for 2-D operands."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def vjp(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    _record(out, (a, b), vjp)
    return out


def matvec(a: Tensor, x: Tensor) -> Tensor:
    """y = A x for A (m,n) and x (n,)."""
    if a.data.ndim != 2 or x.data.ndim != 1:
        raise ShapeError(f"matvec expects (m,n) @ (n,), got {a.shape} and {x.shape}")
    if a.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec extents disagree: {a.shape} vs {x.shape}")
    out = Tensor(a.data @ x.data, requires_grad=a.requires_grad or x.requires_grad)

    def vjp(g):
        return (
            np.outer(g, x.data) if a.requires_grad else None,
            a.data.T @ g if x.requires_grad else None,
        )

    _record(out, (a, x), vjp)
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two vectors, returned as a scalar tensor."""
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot expects equal-length vectors, got {a.shape} and {b.shape}")
    out = Tensor(np.asarray(a.data @ b.data), requires_grad=a.requires_grad or b.requires_grad)

    def vjp(g):
        return (
            g * b.data if a.requires_grad else None,
            g * a.data if b.requires_grad else None,
        )

    _record(out, (a, b), vjp)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {a.shape}")
    out = Tensor(a.data.T.copy(), requires_grad=a.requires_grad)
    _record(out, (a,), lambda g: (g.T,))
    return out


def softmax(v: Tensor) -> Tensor:
    """Shift-invariant softmax of a vector, computed with max subtraction."""
    if v.data.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {v.shape}")
    if v.size == 0:
        raise DomainError("softmax of an empty vector")
    e = np.exp(v.data - v.data.max())
    p = e / e.sum()
    out = Tensor(p, requires_grad=v.requires_grad)
    _record(out, (v,), lambda g: (p * (g - float(g @ p)),))
    return out


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax applied independently to each row of a matrix."""
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {x.shape}")
    e = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    out = Tensor(p, requires_grad=x.requires_grad)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    _record(out, (x,), vjp)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """gain * (x - mean) / sqrt(var + eps) + bias, variance with 1/n."""
    if x.data.ndim != 1 or gain.shape != x.shape or bias.shape != x.shape:
        raise ShapeError(
            f"layer_norm extents disagree: x {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    return _layer_norm_impl(x, gain, bias, eps, axis=None)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer_norm of an (n, d) matrix with shared (d,) gain and bias."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(
            f"layer_norm_rows extents disagree: x {x.shape}, gain {gain.shape}, bias {bias.shape}"
        )
    return _layer_norm_impl(x, gain, bias, eps, axis=1)


def _layer_norm_impl(x: Tensor, gain: Tensor, bias: Tensor, eps: float, axis) -> Tensor:
    kw = {} if axis is None else {"axis": axis, "keepdims": True}
    mean = x.data.mean(**kw)
    var = x.data.var(**kw)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out = Tensor(
        gain.data * xhat + bias.data,
        requires_grad=x.requires_grad or gain.requires_grad or bias.requires_grad,
    )

    def vjp(g):
        gy = g * gain.data
        if x.requires_grad:
            gx = inv * (gy - gy.mean(**kw) - xhat * (gy * xhat).mean(**kw))
        else:
            gx = None
        if axis is None:
            ggain = g * xhat if gain.requires_grad else None
            gbias = g if bias.requires_grad else None
        else:
            ggain = (g * xhat).sum(axis=0) if gain.requires_grad else None
            gbias = g.sum(axis=0) if bias.requires_grad else None
        return gx, ggain, gbias

    _record(out, (x, gain, bias), vjp)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf, requires_grad=x.requires_grad)

    def vjp(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    _record(out, (x,), vjp)
    return out


def sqrt(x: Tensor) -> Tensor:
    root = np.sqrt(x.data)
    out = Tensor(root, requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (g * 0.5 / root,))
    return out


def log(x: Tensor) -> Tensor:
    out = Tensor(np.log(x.data), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (g / x.data,))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),))
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = Tensor(np.asarray(x.data.mean()), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=True),))
    return out


def mean_rows(x: Tensor) -> Tensor:
    """Mean over axis 0 of an (n, d) matrix, yielding a (d,) vector."""
    if x.data.ndim != 2:
        raise ShapeError(f"mean_rows expects a matrix, got shape {x.shape}")
    n = x.shape[0]
    out = Tensor(x.data.mean(axis=0), requires_grad=x.requires_grad)
    _record(out, (x,), lambda g: (np.broadcast_to(g / n, x.shape).astype(x.dtype, copy=True),))
    return out


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into an (n, d) matrix."""
    if not vectors:
        raise DomainError("stack_rows of an empty sequence")
    d = vectors[0].shape
    for v in vectors:
        if v.data.ndim != 1 or v.shape != d:
            raise ShapeError(f"stack_rows mixes shapes {d} and {v.shape}")
    out = Tensor(
        np.stack([v.data for v in vectors]),
        requires_grad=any(v.requires_grad for v in vectors),
    )

    def vjp(g):
        return tuple(g[i] if v.requires_grad else None for i, v in enumerate(vectors))

    _record(out, tuple(vectors), vjp)
    return out


def stack_scalars(scalars: Sequence[Tensor]) -> Tensor:
    """Pack scalar tensors into a vector."""
    if not scalars:
        raise DomainError("stack_scalars of an empty sequence")
    for s in scalars:
        if s.shape != ():
            raise ShapeError(f"stack_scalars expects scalars, got shape {s.shape}")
    out = Tensor(
        np.array([s.data for s in scalars]),
        requires_grad=any(s.requires_grad for s in scalars),
    )

    def vjp(g):
        return tuple(
            np.asarray(g[i]) if s.requires_grad else None for i, s in enumerate(scalars)
        )

    _record(out, tuple(scalars), vjp)
    return out


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Vertical concatenation of two matrices with equal column counts."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"concat_rows column extents disagree: {a.shape} vs {b.shape}")
    out = Tensor(
        np.concatenate([a.data, b.data], axis=0),
        requires_grad=a.requires_grad or b.requires_grad,
    )
    p = a.shape[0]

    def vjp(g):
        return (
            g[:p] if a.requires_grad else None,
            g[p:] if b.requires_grad else None,
        )

    _record(out, (a, b), vjp)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Horizontal concatenation of matrices with equal row counts."""
    if not parts:
        raise DomainError("concat_cols of an empty sequence")
    n = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != n:
            raise ShapeError(f"concat_cols row extents disagree: {[q.shape for q in parts]}")
    out = Tensor(
        np.concatenate([p.data for p in parts], axis=1),
        requires_grad=any(p.requires_grad for p in parts),
    )
    offsets = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(
            g[:, offsets[i]:offsets[i + 1]] if p.requires_grad else None
            for i, p in enumerate(parts)
        )

    _record(out, tuple(parts), vjp)
    return out


def row(x: Tensor, i: int) -> Tensor:
    """Row i of a matrix as a vector."""
    if x.data.ndim != 2:
        raise ShapeError(f"row expects a matrix, got shape {x.shape}")
    if not 0 <= i < x.shape[0]:
        raise ContractError(f"row index {i} out of range for shape {x.shape}")
    out = Tensor(x.data[i].copy(), requires_grad=x.requires_grad)

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[i] = g
        return (gx,)

    _record(out, (x,), vjp)
    return out


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) of a matrix."""
    if x.data.ndim != 2:
        raise ShapeError(f"rows expects a matrix, got shape {x.shape}")
    if not 0 <= start <= stop <= x.shape[0]:
        raise ContractError(f"row slice [{start}:{stop}) out of range for shape {x.shape}")
    out = Tensor(x.data[start:stop].copy(), requires_grad=x.requires_grad)

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    _record(out, (x,), vjp)
    return out


def cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a matrix."""
    if x.data.ndim != 2:
        raise ShapeError(f"cols expects a matrix, got shape {x.shape}")
    if not 0 <= start <= stop <= x.shape[1]:
        raise ContractError(f"column slice [{start}:{stop}) out of range for shape {x.shape}")
    out = Tensor(x.data[:, start:stop].copy(), requires_grad=x.requires_grad)

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    _record(out, (x,), vjp)
    return out


def pick(v: Tensor, i: int) -> Tensor:
    """Element i of a vector as a scalar tensor."""
    if v.data.ndim != 1:
        raise ShapeError(f"pick expects a vector, got shape {v.shape}")
    if not 0 <= i < v.shape[0]:
        raise ContractError(f"pick index {i} out of range for shape {v.shape}")
    out = Tensor(np.asarray(v.data[i]), requires_grad=v.requires_grad)

    def vjp(g):
        gv = np.zeros_like(v.data)
        gv[i] = g
        return (gv,)

    _record(out, (v,), vjp)
    return out


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; gradients scatter-add back."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-D, got shape {table.shape}")
    idx = list(ids)
    if not idx:
        raise DomainError("embedding lookup with no ids")
    for i in idx:
        if not 0 <= int(i) < table.shape[0]:
            raise ContractError(f"token id {i} out of range for table of {table.shape[0]}")
    out = Tensor(table.data[idx].copy(), requires_grad=table.requires_grad)

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    _record(out, (table,), vjp)
    return out


# ---------------------------------------------------------------------------
# parameter store
# ---------------------------------------------------------------------------


class ParamStore:
    """Named, shaped, trainable-or-frozen parameter tensors.

    Frozen means ``requires_grad`` is False: gradients are never materialized
    for the tensor and optimizers skip it.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter {name!r} already registered")
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if t.requires_grad]

    def frozen(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if not t.requires_grad]

    def set_trainable(self, prefix: str, flag: bool) -> int:
        """Flip requires_grad on every parameter whose name starts with prefix."""
        hit = 0
        for name, t in self._params.items():
            if name.startswith(prefix):
                t.requires_grad = flag
                hit += 1
        return hit

    def freeze(self, prefix: str) -> int:
        return self.set_trainable(prefix, False)

    def total_size(self) -> int:
        return sum(t.size for t in self._params.values())

    def size_by_group(self) -> dict[str, int]:
        """Parameter counts keyed by the first dotted name component."""
        out: dict[str, int] = {}
        for name, t in self._params.items():
            group = name.split(".", 1)[0]
            out[group] = out.get(group, 0) + t.size
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                raise ContractError(f"missing array for parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=t.dtype)
            if arr.shape != t.shape:
                raise ShapeError(
                    f"parameter {name!r}: stored shape {arr.shape} != expected {t.shape}"
                )
            t.data = arr.copy()


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    """Worst-case comparison of analytic and central-difference gradients."""

    max_rel_error: float
    worst_param: str
    worst_index: int
    worst_analytic: float
    worst_numeric: float
    coords_checked: int
    per_param: dict[str, float] = field(default_factory=dict)

    def ok(self, tol: float) -> bool:
        return self.max_rel_error <= tol


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    epsilon: float = 1e-5,
    max_coords_per_param: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients of a scalar function against central differences.

    ``f`` must be deterministic given the parameter values; the check probes
    (f(theta+eps) - f(theta-eps)) / 2 eps on sampled coordinates of every
    trainable parameter.
    """
    if epsilon <= 0:
        raise DomainError(f"epsilon must be positive, got {epsilon}")

    base_a = f(params).item()
    base_b = f(params).item()
    if base_a != base_b:
        raise NonDeterministicError(
            f"function returned {base_a!r} then {base_b!r} on identical parameters"
        )

    with GradTape() as tape:
        loss = f(params)
    grads = backward(tape, loss)

    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    report = GradCheckReport(
        max_rel_error=0.0,
        worst_param="",
        worst_index=-1,
        worst_analytic=0.0,
        worst_numeric=0.0,
        coords_checked=0,
    )
    for name, t in params.trainable():
        analytic = grads.get(t)
        flat = t.data.reshape(-1)
        if max_coords_per_param is None or t.size <= max_coords_per_param:
            coords = range(t.size)
        else:
            coords = sorted(rng.choice(t.size, size=max_coords_per_param, replace=False))
        worst = 0.0
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + epsilon
            up = f(params).item()
            flat[idx] = orig - epsilon
            down = f(params).item()
            flat[idx] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = 0.0 if analytic is None else float(analytic.reshape(-1)[idx])
            err = _rel_error(a, numeric)
            report.coords_checked += 1
            worst = max(worst, err)
            if err > report.max_rel_error:
                report.max_rel_error = err
                report.worst_param = name
                report.worst_index = int(idx)
                report.worst_analytic = a
                report.worst_numeric = numeric
        report.per_param[name] = worst
    return report
