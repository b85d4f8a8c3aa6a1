"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every array in the toolkit is a Tensor. Gradients are produced by recording
primitive operations on an explicit Tape and replaying it backwards once.
Tensors without a tape attachment are plain immutable values.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DomainError(ValueError):
    """Input outside the mathematical domain of the operation."""


class TapeError(RuntimeError):
    """Differentiation-tape contract violation."""


class SingularMatrixError(ValueError):
    """Matrix is numerically singular (pivot below threshold)."""


class Tape:
    """Ordered record of executed primitives with their local derivatives.

    A tape is single-use: after `backward` it is consumed and any further
    recording or replay on it raises TapeError.
    """

    def __init__(self):
        self.nodes = []
        self.consumed = False
        self.watched = []

    def watch(self, t: "Tensor") -> "Tensor":
        """Attach a leaf tensor so that backward() fills its grad."""
        if self.consumed:
            raise TapeError("cannot watch a tensor on a consumed tape")
        t.tape = self
        self.watched.append(t)
        return t

    def backward(self, loss: "Tensor") -> None:
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward call")
        if loss.tape is not self:
            raise TapeError("loss does not belong to this tape")
        if loss.data.shape != ():
            raise TapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        self.consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for out, parents in reversed(self.nodes):
            g = out.grad
            if g is None:
                continue
            for parent, vjp in parents:
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = np.zeros(parent.shape, dtype=np.float64)
                parent.grad += contrib
        for t in self.watched:
            if t.grad is None:
                t.grad = np.zeros(t.shape, dtype=np.float64)


class Tensor:
    """Row-major float64 array, optionally linked to a differentiation tape."""

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape: Tape | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape
        if tape is not None:
            tape.watch(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        if self.tape is None:
            raise TapeError("tensor is not attached to a tape")
        self.tape.backward(self)

    def __repr__(self):
        return f"Tensor({self.data!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, tape: Tape | None = None) -> Tensor:
    return Tensor(data, tape=tape)


def _wrap(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if t.tape.consumed:
            raise TapeError("operation on a tensor attached to a consumed tape")
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise TapeError("operands belong to different tapes")
    return tape


def _record(out: Tensor, parents) -> Tensor:
    # parents: [(tensor, vjp), ...] with only tape-carrying parents retained
    if out.tape is not None:
        out.tape.nodes.append((out, parents))
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape` (undoes scalar broadcast)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_binary_shapes(a: Tensor, b: Tensor, opname: str):
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} "
                     "must match or one operand must be scalar")


def _binary(opname, a, b, value_fn, vjp_a, vjp_b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, opname)
    out = Tensor(value_fn(a.data, b.data))
    out.tape = _result_tape(a, b)
    if out.tape is None:
        return out
    parents = []
    if a.tape is not None:
        parents.append((a, lambda g, a=a, b=b, out=out: _unbroadcast(vjp_a(g, a.data, b.data, out.data), a.shape)))
    if b.tape is not None:
        parents.append((b, lambda g, a=a, b=b, out=out: _unbroadcast(vjp_b(g, a.data, b.data, out.data), b.shape)))
    return _record(out, parents)


def _unary(a, value_fn, vjp) -> Tensor:
    a = _wrap(a)
    out = Tensor(value_fn(a.data))
    out.tape = _result_tape(a)
    if out.tape is None:
        return out
    return _record(out, [(a, lambda g, a=a, out=out: vjp(g, a.data, out.data))])


# ---------------------------------------------------------------------------
# elementwise primitives

def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y, o: g,
                   lambda g, x, y, o: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y, o: g,
                   lambda g, x, y, o: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y, o: g * y,
                   lambda g, x, y, o: g * x)


def div(a, b) -> Tensor:
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * o / y)


def neg(a) -> Tensor:
    return _unary(a, lambda x: -x, lambda g, x, o: -g)


def absolute(a) -> Tensor:
    return _unary(a, np.abs, lambda g, x, o: g * np.sign(x))


def exp(a) -> Tensor:
    return _unary(a, np.exp, lambda g, x, o: g * o)


def log(a) -> Tensor:
    a = _wrap(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive inputs")
    return _unary(a, np.log, lambda g, x, o: g / x)


def tanh(a) -> Tensor:
    return _unary(a, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def sigmoid(a) -> Tensor:
    # 0.5*(1+tanh(x/2)) is exact and avoids overflow at large |x|
    return _unary(a, lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)),
                  lambda g, x, o: g * o * (1.0 - o))


def softplus(a) -> Tensor:
    return _unary(a, lambda x: np.logaddexp(0.0, x),
                  lambda g, x, o: g * 0.5 * (1.0 + np.tanh(0.5 * x)))


# ---------------------------------------------------------------------------
# reductions

def _expand_reduced(g: np.ndarray, shape, axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def _check_axis(a: Tensor, axis):
    if axis is not None and not (-a.data.ndim <= axis < a.data.ndim):
        raise ShapeError(f"axis {axis} out of bounds for rank {a.data.ndim}")


def reduce_sum(a, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    _check_axis(a, axis)
    return _unary(a, lambda x: np.sum(x, axis=axis),
                  lambda g, x, o: _expand_reduced(g, x.shape, axis).copy())


def reduce_mean(a, axis: int | None = None) -> Tensor:
    a = _wrap(a)
    _check_axis(a, axis)
    n = a.size if axis is None else a.shape[axis]
    return _unary(a, lambda x: np.mean(x, axis=axis),
                  lambda g, x, o: _expand_reduced(g, x.shape, axis) / n)


def logsumexp(a, axis: int | None = None) -> Tensor:
    """Numerically stable log-sum-exp via max shift."""
    a = _wrap(a)
    _check_axis(a, axis)

    def value(x):
        if axis is None:
            m = np.max(x)
            return m + np.log(np.sum(np.exp(x - m)))
        m = np.max(x, axis=axis, keepdims=True)
        return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))

    def vjp(g, x, o):
        o_full = _expand_reduced(o, x.shape, axis)
        g_full = _expand_reduced(g, x.shape, axis)
        return g_full * np.exp(x - o_full)

    return _unary(a, value, vjp)


# ---------------------------------------------------------------------------
# linear algebra and structure

def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul requires 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    out.tape = _result_tape(a, b)
    if out.tape is None:
        return out
    parents = []
    if a.tape is not None:
        parents.append((a, lambda g, b=b: g @ b.data.T))
    if b.tape is not None:
        parents.append((b, lambda g, a=a: a.data.T @ g))
    return _record(out, parents)


def matvec(a, x) -> Tensor:
    a, x = _wrap(a), _wrap(x)
    if a.data.ndim != 2 or x.data.ndim != 1 or a.shape[1] != x.shape[0]:
        raise ShapeError(f"matvec requires (m,k) @ (k,), got {a.shape} and {x.shape}")
    out = Tensor(a.data @ x.data)
    out.tape = _result_tape(a, x)
    if out.tape is None:
        return out
    parents = []
    if a.tape is not None:
        parents.append((a, lambda g, x=x: np.outer(g, x.data)))
    if x.tape is not None:
        parents.append((x, lambda g, a=a: a.data.T @ g))
    return _record(out, parents)


def dot(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot requires equal-length vectors, got {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data)
    out.tape = _result_tape(a, b)
    if out.tape is None:
        return out
    parents = []
    if a.tape is not None:
        parents.append((a, lambda g, b=b: g * b.data))
    if b.tape is not None:
        parents.append((b, lambda g, a=a: g * a.data))
    return _record(out, parents)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    return _unary(a, lambda x: x.reshape(shape),
                  lambda g, x, o: g.reshape(x.shape))


def segment(a, start: int, stop: int) -> Tensor:
    """Contiguous slice [start:stop) of a 1-D tensor."""
    a = _wrap(a)
    if a.data.ndim != 1:
        raise ShapeError("segment expects a 1-D tensor")
    if not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"segment [{start}:{stop}) out of bounds for length {a.shape[0]}")

    def vjp(g, x, o):
        full = np.zeros(x.shape, dtype=np.float64)
        full[start:stop] = g
        return full

    return _unary(a, lambda x: x[start:stop].copy(), vjp)


def concat(parts) -> Tensor:
    """Concatenate 1-D tensors along their only axis."""
    parts = [_wrap(p) for p in parts]
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError("concat expects 1-D tensors")
    out = Tensor(np.concatenate([p.data for p in parts]))
    out.tape = _result_tape(*parts)
    if out.tape is None:
        return out
    parents = []
    offset = 0
    for p in parts:
        n = p.shape[0]
        if p.tape is not None:
            parents.append((p, lambda g, lo=offset, hi=offset + n: g[lo:hi].copy()))
        offset += n
    return _record(out, parents)


def put(vec, shape, flat_indices) -> Tensor:
    """Scatter a 1-D tensor into a zero array of `shape` at flat indices."""
    vec = _wrap(vec)
    flat_indices = np.asarray(flat_indices, dtype=np.int64)
    if vec.data.ndim != 1 or flat_indices.shape != vec.shape:
        raise ShapeError("put requires a 1-D tensor and one flat index per entry")

    def value(x):
        out = np.zeros(shape, dtype=np.float64)
        out.reshape(-1)[flat_indices] = x
        return out

    return _unary(vec, value, lambda g, x, o: g.reshape(-1)[flat_indices].copy())


def _lu_factor(a: np.ndarray, pivot_tol: float = 1e-12):
    """In-place-style Doolittle LU with partial pivoting.

    Returns (lu, perm_sign) where lu packs unit-lower L below the diagonal
    and U on/above it.
    """
    lu = a.copy()
    n = lu.shape[0]
    sign = 1
    for j in range(n):
        p = j + int(np.argmax(np.abs(lu[j:, j])))
        if abs(lu[p, j]) < pivot_tol:
            raise SingularMatrixError(f"pivot {abs(lu[p, j]):.3e} below {pivot_tol:.0e} "
                                      f"at column {j}")
        if p != j:
            lu[[j, p]] = lu[[p, j]]
            sign = -sign
        lu[j + 1:, j] /= lu[j, j]
        lu[j + 1:, j + 1:] -= np.outer(lu[j + 1:, j], lu[j, j + 1:])
    return lu, sign


def lu_logdet(a) -> tuple[Tensor, int]:
    """log|det a| and the exact sign of det a, via pivoted LU."""
    a = _wrap(a)
    if a.data.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"lu_logdet requires a square matrix, got {a.shape}")
    lu, sign = _lu_factor(a.data)
    diag = np.diagonal(lu)
    sign *= int(np.prod(np.sign(diag)))
    out = Tensor(np.sum(np.log(np.abs(diag))))
    out.tape = _result_tape(a)
    if out.tape is not None:
        # d log|det A| / dA = inv(A)^T
        inv = np.linalg.inv(a.data)
        _record(out, [(a, lambda g, inv=inv: g * inv.T)])
    return out, sign
