"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation records itself on the active :class:`Tape` when at least one
input requires a gradient. Outside a tape, operations run eagerly and nothing
is recorded, which is how inference avoids the bookkeeping cost.

Only what a small transformer needs is implemented: elementwise arithmetic
with numpy broadcasting, batched matmul, reshapes and slicing, reductions,
softmax, layer norm and the exact (erf) GELU.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import special

__all__ = [
    "ShapeError",
    "ContractError",
    "Tensor",
    "Tape",
    "tensor",
    "matmul",
    "softmax",
    "layer_norm",
    "gelu",
    "concat",
    "broadcast_to",
    "backward",
    "finite_diff_gradient",
    "inject_backward_fault",
    "make_rng",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition was violated."""


def make_rng(*seed: int) -> np.random.Generator:
    """PCG64 generator seeded from one or more non-negative integers.

    Multiple integers are combined through :class:`numpy.random.SeedSequence`,
    so ``make_rng(seed, epoch, index)`` gives an independent stream per tuple.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(seed))))


# name of op -> multiplicative corruption applied to its local gradient
_FAULTS: dict[str, float] = {}


@contextlib.contextmanager
def inject_backward_fault(op: str, factor: float = 1.01) -> Iterator[None]:
    """Scale the backward rule of ``op`` by ``factor``; negative control for gradient checks."""
    _FAULTS[op] = factor
    try:
        yield
    finally:
        _FAULTS.pop(op, None)


def _fault(op: str, grad: np.ndarray) -> np.ndarray:
    factor = _FAULTS.get(op)
    return grad if factor is None else grad * factor


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations executed inside the ``with`` block
    are appended in execution order, and :meth:`backward` replays them in
    reverse.
    """

    _stack: list["Tape"] = []

    def __init__(self) -> None:
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        Tape._stack.pop()

    @staticmethod
    def current() -> "Tape | None":
        return Tape._stack[-1] if Tape._stack else None

    def backward(self, loss: "Tensor") -> None:
        backward(loss, self)


class Tensor:
    """An n-dimensional float64 array with an optional gradient buffer.

    Leaf tensors created with ``requires_grad=True`` accumulate into
    ``grad`` on every backward pass. Intermediate results are marked
    ``requires_grad`` too but keep their gradients internal to the pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_leaf", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None) -> None:
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._leaf = True

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else _axis_count(self.shape, axis)
        return tsum(self, axis, keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return texp(self)

    def log(self):
        return tlog(self)

    def sqrt(self):
        return tsqrt(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _axis_count(shape: tuple[int, ...], axis) -> int:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return int(np.prod([shape[a] for a in axes]))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad


def _record(out_data: np.ndarray, parents: tuple[Tensor, ...], rule: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.name = None
    out._leaf = False
    tape = Tape.current()
    out.requires_grad = tape is not None and any(p.requires_grad for p in parents)
    if out.requires_grad:
        tape.nodes.append((out, parents, rule))
    return out


# ----------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa) if a.requires_grad else None,
                              _unbroadcast(g, sb) if b.requires_grad else None))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                              _unbroadcast(g * ad, bd.shape) if b.requires_grad else None))


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data
    return _record(out, (a,), lambda g: (-g * out * out,))


def texp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def tlog(a: Tensor) -> Tensor:
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (g * 0.5 / out,))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with Phi the standard normal CDF (erf form)."""
    xd = x.data
    cdf = special.ndtr(xd)  # 0.5 * (1 + erf(x / sqrt(2)))

    def rule(g):
        pdf = np.exp(-0.5 * xd * xd) / math.sqrt(2.0 * math.pi)
        return (_fault("gelu", g * (cdf + xd * pdf)),)

    return _record(xd * cdf, (x,), rule)


# ------------------------------------------------------------------ structural
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def rule(g):
        ga = gb = None
        if bd.ndim == 2 and ad.ndim > 2:
            # fold batch axes into one GEMM
            if a.requires_grad:
                ga = (g.reshape(-1, g.shape[-1]) @ bd.T).reshape(ad.shape)
            if b.requires_grad:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            if a.requires_grad:
                ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
            if b.requires_grad:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return (None if ga is None else _fault("matmul", ga)), gb

    if bd.ndim == 2 and ad.ndim > 2:
        out = (ad.reshape(-1, ad.shape[-1]) @ bd).reshape(ad.shape[:-1] + (bd.shape[-1],))
    else:
        out = ad @ bd
    return _record(out, (a, b), rule)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def getitem(a: Tensor, index) -> Tensor:
    src_shape = a.shape

    def rule(g):
        full = np.zeros(src_shape)
        if _is_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return _record(a.data[index], (a,), rule)


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def rule(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return tuple(out)

    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]} along axis {axis}") from exc
    return _record(data, tuple(tensors), rule)


def broadcast_to(a: Tensor, shape) -> Tensor:
    src = a.shape
    return _record(np.broadcast_to(a.data, shape).copy(), (a,),
                   lambda g: (_unbroadcast(g, src),))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _record(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), rule)


# ------------------------------------------------------------- normalizations
def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis`` with max subtraction.

    ``mask`` is a boolean array broadcastable to ``x``; False entries get
    probability exactly zero. Every slice must keep at least one True entry.
    """
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax: axis {axis} out of range for rank {x.ndim}")
    xd = x.data
    if mask is not None:
        xd = np.where(mask, xd, -np.inf)
    out = xd - xd.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def rule(g):
        return (_fault("softmax", out * (g - (g * out).sum(axis=axis, keepdims=True))),)

    return _record(out, (x,), rule)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    if eps <= 0:
        raise ContractError("layer_norm: eps must be positive")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data

    def rule(g):
        gh = g * gd
        n = xd.shape[-1]
        if not x.requires_grad:
            return None, _unbroadcast(g * xhat, gd.shape), _unbroadcast(g, bias.shape)
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).sum(axis=-1, keepdims=True) / n)
        ggain = _unbroadcast(g * xhat, gd.shape) if gain.requires_grad else None
        gbias = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        return _fault("layer_norm", gx), ggain, gbias

    return _record(xhat * gd + bias.data, (x, gain, bias), rule)


# -------------------------------------------------------------------- backward
def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate d(loss)/d(.) through ``tape`` into leaf ``grad`` buffers.

    Leaf gradients accumulate: calling this twice without zeroing doubles
    them.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, parents, rule in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for parent, pg in zip(parents, rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._leaf:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def finite_diff_gradient(
    f: Callable[[], float], params: Sequence[Tensor], step: float = 1e-4
) -> list[np.ndarray]:
    """Central-difference gradient of ``f`` with respect to every scalar of ``params``.

    ``f`` takes no arguments and reads the parameters' current ``data``;
    each scalar is perturbed in place and restored afterwards.
    """
    if step <= 0:
        raise ContractError("finite_diff_gradient: step must be positive")
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f())
            flat[i] = orig - step
            lo = float(f())
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out
