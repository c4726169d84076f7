"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` records the operation that produced it.  Calling
``backward()`` on a scalar walks the graph in reverse topological order and
accumulates ``d root / d leaf`` into ``leaf.grad`` for every leaf that
requires a gradient.  Gradients of intermediate nodes live only for the
duration of one backward pass, so two backward passes without
``zero_grad`` add exactly twice the gradient to each leaf.

Broadcasting follows numpy; the backward of a broadcast sums the gradient
back down to the operand's shape.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import MissingGradient, NonScalarRoot, ShapeMismatch

FORMAT_VERSION = 1


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = ""
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op or 'leaf'})"

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        if self.data.size != 1:
            raise NonScalarRoot(f"backward needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            return
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg

    # operator sugar
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

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_check(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: incompatible shapes", a.shape, b.shape) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                   "mul")


def scale(a, c: float) -> Tensor:
    """Multiplication by a python scalar."""
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    out = a.data / b.data
    return _result(out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)), "div")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = math.prod(a.shape[ax] for ax in axes)
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return _result(out, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def reciprocal(a, eps: float = 0.0) -> Tensor:
    """``1 / max(a, eps)``; the gradient is zero where the guard is active."""
    a = as_tensor(a)
    guarded = a.data < eps
    d = np.where(guarded, eps, a.data)
    out = 1.0 / d
    return _result(out, (a,), lambda g: (np.where(guarded, 0.0, -g * out * out),), "reciprocal")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
                t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax):
            raise ShapeMismatch("concat", ts[0].shape, t.shape)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return _result(np.concatenate([t.data for t in ts], axis=ax), ts, back, "concat")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _result(a.data[idx], (a,), back, "getitem")


def take_cols(a, cols) -> Tensor:
    """Column gather on a rank-2 tensor (repeats allowed)."""
    cols = np.asarray(cols, dtype=int)
    return getitem(a, (slice(None), cols))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.T, (a,), lambda g: (g.T,), "transpose")


# Rotation helpers.  With s = |w|^2 and r = sqrt(s), Rodrigues' formula needs
# sin(r)/r and (1 - cos r)/r^2; both are smooth in s and expanded as series
# near zero where the closed forms cancel catastrophically.
_SMALL = 1e-3


def _sinc_terms(s):
    r = np.sqrt(np.where(s < _SMALL, 1.0, s))
    val = np.where(s < _SMALL, 1 - s / 6 + s**2 / 120 - s**3 / 5040, np.sin(r) / r)
    der = np.where(s < _SMALL, -1 / 6 + s / 60 - s**2 / 1680 + s**3 / 90720,
                   (r * np.cos(r) - np.sin(r)) / (2 * r**3))
    return val, der


def _cosc_terms(s):
    r = np.sqrt(np.where(s < _SMALL, 1.0, s))
    val = np.where(s < _SMALL, 0.5 - s / 24 + s**2 / 720 - s**3 / 40320, (1 - np.cos(r)) / r**2)
    der = np.where(s < _SMALL, -1 / 24 + s / 360 - s**2 / 13440 + s**3 / 1209600,
                   (r * np.sin(r) - 2 * (1 - np.cos(r))) / (2 * r**4))
    return val, der


def sin_over_root(s) -> Tensor:
    """``sin(sqrt(s)) / sqrt(s)`` for ``s >= 0``."""
    s = as_tensor(s)
    val, der = _sinc_terms(s.data)
    return _result(val, (s,), lambda g: (g * der,), "sin_over_root")


def one_minus_cos_over_sq(s) -> Tensor:
    """``(1 - cos(sqrt(s))) / s`` for ``s >= 0``."""
    s = as_tensor(s)
    val, der = _cosc_terms(s.data)
    return _result(val, (s,), lambda g: (g * der,), "one_minus_cos_over_sq")


class ParamSet:
    """Ordered name -> trainable Tensor mapping."""

    def __init__(self, items: Iterable[tuple[str, Tensor]] = ()):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in items:
            self.add(name, t)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    @property
    def num_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def subset(self, prefixes: Sequence[str]) -> ParamSet:
        out = ParamSet()
        out._params = OrderedDict(
            (n, t) for n, t in self._params.items() if any(n.startswith(p) for p in prefixes))
        return out

    @staticmethod
    def union(*sets: ParamSet) -> ParamSet:
        out = ParamSet()
        for s in sets:
            for n, t in s.items():
                if n in out._params:
                    raise KeyError(f"duplicate parameter name {n!r}")
                out._params[n] = t
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_snapshot(self, values: dict[str, np.ndarray]):
        for n, t in self._params.items():
            v = np.asarray(values[n], dtype=np.float64)
            if v.shape != t.shape:
                raise ShapeMismatch(f"parameter {n!r}", v.shape, t.shape)
            t.data = v.copy()

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.data)) for t in self._params.values())

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "params": [{"name": n, "shape": list(t.shape), "values": t.data.ravel().tolist()}
                       for n, t in self._params.items()],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ParamSet:
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format version {d.get('format_version')!r}")
        return cls((p["name"], np.array(p["values"], dtype=np.float64).reshape(p["shape"]))
                   for p in d["params"])

    def load_dict(self, d: dict):
        other = ParamSet.from_dict(d)
        self.load_snapshot(other.snapshot())


def save_params(params: ParamSet, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(params.to_dict(), f)


def load_params(path) -> ParamSet:
    with open(path, encoding="utf-8") as f:
        return ParamSet.from_dict(json.load(f))


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "weight_decay": self.weight_decay, "step": self.step,
            "m": {k: {"shape": list(a.shape), "values": a.ravel().tolist()} for k, a in self.m.items()},
            "v": {k: {"shape": list(a.shape), "values": a.ravel().tolist()} for k, a in self.v.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> AdamState:
        def arrays(block):
            return {k: np.array(e["values"], dtype=np.float64).reshape(e["shape"]) for k, e in block.items()}

        return cls(lr=d["lr"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"],
                   weight_decay=d["weight_decay"], step=d["step"], m=arrays(d["m"]), v=arrays(d["v"]))


def adam_step(params: ParamSet, state: AdamState) -> None:
    """One bias-corrected Adam update, in place.  Optional coupled L2 decay."""
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradient(name)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = p.grad
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, params: ParamSet, lr: float, weight_decay: float = 0.0, **kw):
        self.params = params
        self.state = AdamState(lr=lr, weight_decay=weight_decay, **kw)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float):
        self.state.lr = value

    def zero_grad(self):
        self.params.zero_grad()

    def step(self):
        adam_step(self.params, self.state)


def step_decay_lr(base_lr: float, epoch: int, decay_epochs: Sequence[int], factor: float = 0.1) -> float:
    """Learning rate for 0-based ``epoch``: ``base * factor**(#decay points <= epoch)``."""
    return base_lr * factor ** sum(1 for d in decay_epochs if epoch >= d)


def clip_grad_norm(params: ParamSet, max_norm: float) -> float:
    total = math.sqrt(sum(float(np.sum(t.grad**2)) for t in params.values() if t.grad is not None))
    if total > max_norm:
        k = max_norm / (total + 1e-12)
        for t in params.values():
            if t.grad is not None:
                t.grad = t.grad * k
    return total


def numerical_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5,
                       indices: Iterable | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. entries of array ``x`` (mutated and restored)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = []
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
              max_entries: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between autograd and central differences.

    ``fn`` maps Tensors (one per input array) to a scalar Tensor.  With
    ``max_entries`` only a random subset of each input's entries is probed.
    """
    rng = rng or np.random.default_rng(0)
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    fn(*leaves).backward()
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        analytic = leaf.grad.reshape(-1) if leaf.grad is not None else np.zeros(arr.size)
        if max_entries is not None and arr.size > max_entries:
            idx = np.sort(rng.choice(arr.size, size=max_entries, replace=False))
        else:
            idx = np.arange(arr.size)

        def f():
            return fn(*[Tensor(a) for a in arrays]).item()

        numeric = numerical_gradient(f, arr, h, idx)
        worst = max(worst, relative_error(analytic[idx], numeric))
    return worst
