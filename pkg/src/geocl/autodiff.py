"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray and remembers how it was produced; calling
``backward`` on a scalar loss fills ``grad`` on every reachable tensor
that requires gradients. The op set is deliberately closed: affine maps,
elementwise tanh/tan/arctan/artanh, slicing, concatenation, norms, inner
products, Mobius addition (via the primitives), log-sum-exp and Huber.

Graphs are per-step and single-threaded; accumulation order is fixed, so
identical inputs give bit-identical gradients.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, NumericalDomainError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "tag")

    def __init__(self, value, requires_grad=False, parents=(), backward=None, tag=""):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.tag = tag

    @property
    def shape(self):
        return self.value.shape

    def check_finite(self):
        if not np.all(np.isfinite(self.value)):
            raise NumericalDomainError(f"non-finite value at op '{self.tag}'")
        return self

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def backward(self):
        if self.value.size != 1:
            raise ContractViolation("backward requires a scalar root")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward, tag=""):
    reqs = [p for p in parents if p.requires_grad]
    if not reqs:
        return Tensor(value, tag=tag)
    return Tensor(value, parents=tuple(reqs), backward=backward, tag=tag)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    g = _unbroadcast(np.asarray(g, dtype=float), t.value.shape)
    t.grad = g if t.grad is None else t.grad + g


# -- arithmetic ---------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.value + b.value

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _make(out, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.value - b.value

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(out, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value * b.value

    def bwd(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return _make(out, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.value / b.value

    def bwd(g):
        _accum(a, g / b.value)
        _accum(b, -g * a.value / (b.value * b.value))

    return _make(out, (a, b), bwd, "div")


def neg(a: Tensor) -> Tensor:
    return _make(-a.value, (a,), lambda g: _accum(a, -g), "neg")


def square(a: Tensor) -> Tensor:
    return _make(a.value * a.value, (a,), lambda g: _accum(a, 2.0 * g * a.value), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.value)

    def bwd(g):
        _accum(a, g / (2.0 * out))

    return _make(out, (a,), bwd, "sqrt")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.value @ b.value

    def bwd(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return _make(out, (a, b), bwd, "matmul")


# -- elementwise transcendentals ---------------------------------------

def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)

    def bwd(g):
        _accum(a, g * (1.0 - out * out))

    return _make(out, (a,), bwd, "tanh")


def tan(a: Tensor) -> Tensor:
    out = np.tan(a.value)

    def bwd(g):
        _accum(a, g * (1.0 + out * out))

    return _make(out, (a,), bwd, "tan")


def arctan(a: Tensor) -> Tensor:
    out = np.arctan(a.value)

    def bwd(g):
        _accum(a, g / (1.0 + a.value * a.value))

    return _make(out, (a,), bwd, "arctan")


def arctanh(a: Tensor) -> Tensor:
    z = np.clip(a.value, -1.0 + 1e-15, 1.0 - 1e-15)
    out = np.arctanh(z)

    def bwd(g):
        _accum(a, g / (1.0 - z * z))

    return _make(out, (a,), bwd, "arctanh")


def clip_max(a: Tensor, cap: float) -> Tensor:
    """min(a, cap); zero gradient in the clamped region."""
    inside = a.value < cap
    out = np.where(inside, a.value, cap)

    def bwd(g):
        _accum(a, g * inside)

    return _make(out, (a,), bwd, "clip_max")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)

    def bwd(g):
        _accum(a, g * out)

    return _make(out, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    out = np.log(a.value)

    def bwd(g):
        _accum(a, g / a.value)

    return _make(out, (a,), bwd, "log")


# -- shape ops ----------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.value.shape
    return _make(a.value.reshape(shape), (a,), lambda g: _accum(a, g.reshape(old)), "reshape")


def transpose2d(a: Tensor) -> Tensor:
    return _make(a.value.T, (a,), lambda g: _accum(a, g.T), "transpose")


def cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice [start:stop) along the last axis."""
    out = a.value[..., start:stop]

    def bwd(g):
        full = np.zeros_like(a.value)
        full[..., start:stop] = g
        _accum(a, full)

    return _make(out, (a,), bwd, "cols")


def item(a: Tensor, index: int) -> Tensor:
    """Pick one scalar entry of a 1-D tensor."""
    out = a.value[index]

    def bwd(g):
        full = np.zeros_like(a.value)
        full[index] = g
        _accum(a, full)

    return _make(out, (a,), bwd, "item")


def concat(parts: list[Tensor]) -> Tensor:
    out = np.concatenate([p.value for p in parts], axis=-1)
    offsets = np.cumsum([0] + [p.value.shape[-1] for p in parts])

    def bwd(g):
        for p, s, e in zip(parts, offsets[:-1], offsets[1:]):
            _accum(p, g[..., s:e])

    return _make(out, tuple(parts), bwd, "concat")


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g, dtype=float)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.value.shape).copy())

    return _make(out, (a,), bwd, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.value.size if axis is None else a.value.shape[axis]
    return sum_(a, axis=axis) * (1.0 / n)


def inner(a: Tensor, b: Tensor, keepdims=True) -> Tensor:
    """Inner product along the last axis."""
    return sum_(mul(a, b), axis=-1, keepdims=keepdims)


def sqnorm(a: Tensor, keepdims=True) -> Tensor:
    return sum_(square(a), axis=-1, keepdims=keepdims)


def norm(a: Tensor, keepdims=True, eps=1e-30) -> Tensor:
    """Zero-safe Euclidean norm along the last axis."""
    return sqrt(sqnorm(a, keepdims=keepdims) + Tensor(eps))


def logsumexp(a: Tensor, axis=-1) -> Tensor:
    m = a.value.max(axis=axis, keepdims=True)
    shifted = np.exp(a.value - m)
    total = shifted.sum(axis=axis)
    out = np.squeeze(m, axis=axis) + np.log(total)
    soft = shifted / np.expand_dims(total, axis)

    def bwd(g):
        _accum(a, np.expand_dims(np.asarray(g, dtype=float), axis) * soft)

    return _make(out, (a,), bwd, "logsumexp")


def take_rows(a: Tensor, indices) -> Tensor:
    """a[i, indices[i]] for a 2-D tensor; used for true-class logits."""
    idx = np.asarray(indices)
    rows = np.arange(a.value.shape[0])
    out = a.value[rows, idx]

    def bwd(g):
        full = np.zeros_like(a.value)
        full[rows, idx] = g
        _accum(a, full)

    return _make(out, (a,), bwd, "take_rows")


def huber(a: Tensor, b: Tensor) -> Tensor:
    """Branch at |a-b| = 1: quadratic inside, linear outside."""
    diff = a.value - b.value
    absd = np.abs(diff)
    inside = absd <= 1.0
    out = np.where(inside, 0.5 * diff * diff, absd - 0.5)

    def bwd(g):
        d = np.where(inside, diff, np.sign(diff))
        _accum(a, g * d)
        _accum(b, -g * d)

    return _make(out, (a, b), bwd, "huber")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true labels."""
    return mean(logsumexp(logits, axis=-1) - take_rows(logits, labels))


# -- finite-difference checking ----------------------------------------

def gradcheck(loss_builder, sampler, trials=1, h=1e-5, rng=None):
    """Worst relative error of reverse-mode vs central finite differences.

    ``sampler(rng)`` returns a dict of parameter arrays; ``loss_builder``
    maps a dict of Tensors (all requiring grad) to a scalar Tensor.
    """
    if trials < 1:
        raise ContractViolation("trials must be >= 1")
    rng = np.random.default_rng(rng)
    worst = 0.0
    for _ in range(trials):
        arrays = sampler(rng)

        def eval_loss(vals) -> float:
            t = {k: Tensor(v) for k, v in vals.items()}
            return float(loss_builder(t).value)

        tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
        loss = loss_builder(tensors)
        loss.backward()
        for name, base in arrays.items():
            grad = tensors[name].grad
            if grad is None:
                grad = np.zeros_like(base)
            flat = base.reshape(-1)
            for i in range(flat.size):
                bumped = {k: v.copy() for k, v in arrays.items()}
                bumped[name].reshape(-1)[i] += h
                fp = eval_loss(bumped)
                bumped[name].reshape(-1)[i] -= 2 * h
                fm = eval_loss(bumped)
                fd = (fp - fm) / (2 * h)
                an = grad.reshape(-1)[i]
                err = abs(an - fd) / max(abs(fd), abs(an), 1e-8)
                worst = max(worst, err)
    return worst
