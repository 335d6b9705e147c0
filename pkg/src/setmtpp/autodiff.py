"""Define-by-run reverse-mode differentiation over dense numpy arrays.

Every op accepts plain arrays as well as :class:`Node` objects. When no input
is a Node the op just returns the numpy result, so model code written against
this module runs untracked (and fast) at inference time and builds a graph
during training.
"""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

PARAMS_FORMAT = "setmtpp-params"
PARAMS_VERSION = 1


class NumericalError(FloatingPointError):
    """A computation produced a non-finite value or a failed factorization."""


class Node:
    __slots__ = ("value", "parents", "backward_fn", "op", "store", "name")
    __array_ufunc__ = None

    def __init__(self, value, parents=(), backward_fn=None, op="leaf", store=None, name=None):
        value = np.asarray(value, dtype=float)
        if not np.isfinite(value).all():
            raise NumericalError(f"non-finite output from op '{op}'")
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.store = store
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __getitem__(self, idx): return getitem(self, idx)
    def __pow__(self, p): return power(self, p)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)


def value(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=float)


def _tracked(*xs):
    return any(isinstance(x, Node) for x in xs)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# --- elementwise binary -------------------------------------------------------

def add(a, b):
    if not _tracked(a, b):
        return np.add(a, b)
    av, bv = value(a), value(b)
    return Node(av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)), "add")


def sub(a, b):
    if not _tracked(a, b):
        return np.subtract(a, b)
    av, bv = value(a), value(b)
    return Node(av - bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)), "sub")


def mul(a, b):
    if not _tracked(a, b):
        return np.multiply(a, b)
    av, bv = value(a), value(b)
    return Node(av * bv, (a, b),
                lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul")


def div(a, b):
    if not _tracked(a, b):
        return np.divide(a, b)
    av, bv = value(a), value(b)
    out = av / bv
    return Node(out, (a, b),
                lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)), "div")


def neg(a):
    if not _tracked(a):
        return np.negative(a)
    return Node(-a.value, (a,), lambda g: (-g,), "neg")


def power(a, p: float):
    if not _tracked(a):
        return np.power(a, p)
    av = a.value
    return Node(av ** p, (a,), lambda g: (g * p * av ** (p - 1),), "pow")


# --- elementwise unary --------------------------------------------------------

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def exp(a):
    if not _tracked(a):
        return np.exp(a)
    out = np.exp(a.value)
    return Node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if not _tracked(a):
        return np.log(a)
    av = a.value
    return Node(np.log(av), (a,), lambda g: (g / av,), "log")


def sqrt(a):
    if not _tracked(a):
        return np.sqrt(a)
    out = np.sqrt(a.value)
    return Node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def sigmoid(a):
    if not _tracked(a):
        return _sigmoid(np.asarray(a, dtype=float))
    out = _sigmoid(a.value)
    return Node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def softplus(a):
    if not _tracked(a):
        return np.logaddexp(0.0, a)
    av = a.value
    return Node(np.logaddexp(0.0, av), (a,), lambda g: (g * _sigmoid(av),), "softplus")


def tanh(a):
    if not _tracked(a):
        return np.tanh(a)
    out = np.tanh(a.value)
    return Node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def clip(a, lo: float, hi: float):
    if not _tracked(a):
        return np.clip(a, lo, hi)
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return Node(np.clip(av, lo, hi), (a,), lambda g: (g * inside,), "clip")


# --- reductions, shapes, indexing ------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    if not _tracked(a):
        return np.sum(a, axis=axis, keepdims=keepdims)
    av = a.value

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return Node(np.sum(av, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def dot(a, b):
    """Inner product over the last axis."""
    return sum_(mul(a, b), axis=-1)


def reshape(a, shape):
    if not _tracked(a):
        return np.reshape(a, shape)
    av = a.value
    return Node(av.reshape(shape), (a,), lambda g: (g.reshape(av.shape),), "reshape")


def swapaxes(a, i, j):
    if not _tracked(a):
        return np.swapaxes(a, i, j)
    return Node(np.swapaxes(a.value, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def expand_dims(a, axis):
    if not _tracked(a):
        return np.expand_dims(a, axis)
    av = a.value
    return Node(np.expand_dims(av, axis), (a,), lambda g: (g.reshape(av.shape),), "expand_dims")


def getitem(a, idx):
    if not _tracked(a):
        return np.asarray(a)[idx]
    av = a.value

    def bw(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return Node(av[idx], (a,), bw, "getitem")


def stack(xs, axis=0):
    xs = list(xs)
    if not _tracked(*xs):
        return np.stack([np.asarray(x, dtype=float) for x in xs], axis=axis)
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)

    def bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(vals)))

    return Node(out, tuple(xs), bw, "stack")


def concat(xs, axis=-1):
    xs = list(xs)
    if not _tracked(*xs):
        return np.concatenate([np.asarray(x, dtype=float) for x in xs], axis=axis)
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    cuts = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Node(out, tuple(xs), bw, "concat")


# --- linear algebra ------------------------------------------------------------

def matmul(a, b):
    if not _tracked(a, b):
        return np.matmul(a, b)
    av, bv = value(a), value(b)
    out = np.matmul(av, bv)
    a2 = av[None, :] if av.ndim == 1 else av
    b2 = bv[:, None] if bv.ndim == 1 else bv

    def bw(g):
        g2 = g
        if av.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bv.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = _unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape).reshape(av.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape).reshape(bv.shape)
        return ga, gb

    return Node(out, (a, b), bw, "matmul")


def matvec(a, x):
    return matmul(a, x)


def log_det_psd(a, jitter: float = 0.0):
    """log det of a (batch of) symmetric positive definite matrices via Cholesky."""
    av = value(a)
    mat = av + jitter * np.eye(av.shape[-1]) if jitter else av
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise NumericalError("Cholesky factorization failed in log_det_psd") from None
    diag = np.diagonal(chol, axis1=-2, axis2=-1)
    out = 2.0 * np.log(diag).sum(axis=-1)
    if not _tracked(a):
        return out

    def bw(g):
        inv = np.linalg.inv(mat)
        inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
        return (np.asarray(g)[..., None, None] * inv,)

    return Node(out, (a,), bw, "log_det_psd")


# --- backward pass -----------------------------------------------------------------

def _toposort(root: Node):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if isinstance(p, Node) and id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(output: Node, seed: float = 1.0) -> None:
    """Accumulate d(output)/d(param) into the ParamStores owning the graph's leaves."""
    if not isinstance(output, Node):
        return
    if output.value.size != 1:
        raise ValueError("backward requires a scalar output")
    grads = {id(output): np.full(output.value.shape, seed, dtype=float)}
    for node in reversed(_toposort(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.store is not None:
            node.store._accumulate(node.name, g)
            continue
        if node.backward_fn is None:
            continue
        for p, gp in zip(node.parents, node.backward_fn(g)):
            if isinstance(p, Node) and gp is not None:
                prev = grads.get(id(p))
                grads[id(p)] = gp if prev is None else prev + gp


# --- parameters ------------------------------------------------------------------

class ParamStore:
    """Named parameter arrays with accumulated gradients."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self.values: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, v in (params or {}).items():
            self.add(name, v)

    def add(self, name: str, v) -> None:
        v = np.array(v, dtype=float)
        self.values[name] = v
        self.grads[name] = np.zeros_like(v)

    def __getitem__(self, name):
        return self.values[name]

    def __setitem__(self, name, v):
        v = np.asarray(v, dtype=float)
        if name in self.values and v.shape != self.values[name].shape:
            raise ValueError(f"shape mismatch for parameter {name}")
        if name not in self.values:
            self.add(name, v)
        else:
            self.values[name] = v.copy()

    def __contains__(self, name):
        return name in self.values

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def leaves(self) -> dict[str, Node]:
        """Fresh graph leaves bound to this store (gradients flow back here)."""
        return {k: Node(v, op="param", store=self, name=k) for k, v in self.values.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return dict(self.values)

    def _accumulate(self, name, g):
        self.grads[name] += g

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def size(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.values.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.values.values()]) if self.values else np.zeros(0)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float((g * g).sum()) for g in self.grads.values())))

    def to_dict(self) -> dict:
        return {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.values.items()},
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParamStore":
        if d.get("format") != PARAMS_FORMAT:
            raise ValueError("not a parameter file")
        if d.get("version") != PARAMS_VERSION:
            raise ValueError(f"unsupported parameter format version {d.get('version')}")
        return cls({k: np.array(e["data"], dtype=float).reshape(e["shape"]) for k, e in d["params"].items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ParamStore":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- finite-difference verification ------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    worst: tuple
    n_checked: int
    passed: bool


def gradient_check(f: Callable[[Mapping], object], params: ParamStore, eps: float = 1e-5,
                   tol: float = 1e-4, floor: float = 1e-6, max_coords: int | None = None,
                   seed: int = 0) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f(params)`` with central differences.

    ``f`` receives a mapping of parameter name to array (or graph leaf) and must
    return a scalar; it has to be deterministic. The relative error of a
    coordinate is ``|g_ad - g_fd| / max(|g_ad|, |g_fd|, floor)``.
    """
    params.zero_grad()
    out = f(params.leaves())
    if not np.isfinite(value(out)).all():
        raise NumericalError("f is not finite")
    backward(out)
    ad = {k: g.copy() for k, g in params.grads.items()}
    params.zero_grad()

    coords = [(k, i) for k, v in params.values.items() for i in range(v.size)]
    if max_coords is not None and len(coords) > max_coords:
        pick = np.random.default_rng(seed).choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    def f_at():
        r = float(value(f(params.arrays())))
        if not np.isfinite(r):
            raise NumericalError("f is not finite")
        return r

    worst, max_rel, max_abs = None, 0.0, 0.0
    for k, i in coords:
        arr = params.values[k].reshape(-1)
        orig = arr[i]
        arr[i] = orig + eps
        fp = f_at()
        arr[i] = orig - eps
        fm = f_at()
        arr[i] = orig
        fd = (fp - fm) / (2 * eps)
        a = ad[k].reshape(-1)[i]
        abs_err = abs(a - fd)
        rel = abs_err / max(abs(a), abs(fd), floor)
        max_abs = max(max_abs, abs_err)
        if rel >= max_rel:
            max_rel, worst = rel, (k, i, a, fd)
    return GradCheckReport(max_rel, max_abs, worst, len(coords), max_rel < tol)
