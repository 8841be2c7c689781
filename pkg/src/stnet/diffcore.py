"""Small reverse-mode autodiff over numpy arrays, Adam, and a gradient checker.

Every value is float64.  A graph is built eagerly by calling the primitives
below on :class:`Node` objects; :func:`backward` then walks it in reverse
topological order.  Only nodes that (transitively) depend on a parameter
carry gradients, so frozen networks cost one forward plus input gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "needs_grad")

    def __init__(self, value, parents=(), backward_fn=None, needs_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        if needs_grad is None:
            needs_grad = any(p.needs_grad for p in self.parents)
        self.needs_grad = needs_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, needs_grad={self.needs_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def const(x) -> Node:
    return x if isinstance(x, Node) else Node(x, needs_grad=False)


def leaf(x) -> Node:
    return Node(x, needs_grad=True)


def _acc(node, g):
    if not node.needs_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        node.grad += g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _make(value, parents, fn):
    parents = tuple(const(p) for p in parents)
    node = Node(value, parents)
    if node.needs_grad:
        node.backward_fn = fn
    return node


def backward(root: Node, grad=None):
    """Accumulate d(root)/d(node) into ``.grad`` of every node that needs it."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents)
    root.grad = np.ones_like(root.value) if grad is None else np.asarray(grad, dtype=np.float64)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


# --------------------------------------------------------------------------
# primitives


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    a, b = const(a), const(b)

    def fn(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return _make(a.value + b.value, (a, b), fn)


def sub(a, b):
    a, b = const(a), const(b)

    def fn(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, -_unbroadcast(g, b.shape))

    return _make(a.value - b.value, (a, b), fn)


def mul(a, b):
    """Elementwise (Hadamard) product."""
    a, b = const(a), const(b)

    def fn(g):
        _acc(a, _unbroadcast(g * b.value, a.shape))
        _acc(b, _unbroadcast(g * a.value, b.shape))

    return _make(a.value * b.value, (a, b), fn)


hadamard = mul


def scale(x, c: float):
    x = const(x)
    return _make(x.value * c, (x,), lambda g: _acc(x, g * c))


def minimum(a, b):
    """Elementwise min; on ties the whole gradient goes to ``a``."""
    a, b = const(a), const(b)
    _check_same(a, b, "minimum")
    first = a.value <= b.value

    def fn(g):
        _acc(a, np.where(first, g, 0.0))
        _acc(b, np.where(first, 0.0, g))

    return _make(np.where(first, a.value, b.value), (a, b), fn)


def maximum(a, b):
    """Elementwise max; on ties the whole gradient goes to ``a``."""
    a, b = const(a), const(b)
    _check_same(a, b, "maximum")
    first = a.value >= b.value

    def fn(g):
        _acc(a, np.where(first, g, 0.0))
        _acc(b, np.where(first, 0.0, g))

    return _make(np.where(first, a.value, b.value), (a, b), fn)


def matmul(a, b):
    a, b = const(a), const(b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ValueError("matmul needs at least 2-d operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")

    def fn(g):
        _acc(a, _unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        _acc(b, _unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))

    return _make(a.value @ b.value, (a, b), fn)


def affine(x, W, b=None):
    """``x @ W + b`` over the last axis of ``x`` (any leading shape)."""
    x, W = const(x), const(W)
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"affine: input width {x.shape[-1]} != {W.shape[0]}")
    out = x.value @ W.value
    parents = (x, W)
    if b is not None:
        b = const(b)
        out = out + b.value
        parents = (x, W, b)

    def fn(g):
        if x.needs_grad:
            _acc(x, g @ W.value.T)
        g2 = g.reshape(-1, g.shape[-1])
        if W.needs_grad:
            _acc(W, x.value.reshape(-1, x.shape[-1]).T @ g2)
        if b is not None and b.needs_grad:
            _acc(b, g2.sum(axis=0))

    return _make(out, parents, fn)


def tanh(x):
    x = const(x)
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: _acc(x, g * (1.0 - y * y)))


def relu(x):
    x = const(x)
    pos = x.value > 0
    return _make(np.where(pos, x.value, 0.0), (x,), lambda g: _acc(x, np.where(pos, g, 0.0)))


def roll(x, shift: int = 1):
    """Cyclic shift along the last axis; element i moves to i + shift."""
    x = const(x)
    return _make(np.roll(x.value, shift, axis=-1), (x,), lambda g: _acc(x, np.roll(g, -shift, axis=-1)))


def reshape(x, shape):
    x = const(x)
    return _make(x.value.reshape(shape), (x,), lambda g: _acc(x, g.reshape(x.shape)))


def concat(nodes, axis=-1):
    nodes = [const(n) for n in nodes]
    value = np.concatenate([n.value for n in nodes], axis=axis)
    sizes = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def fn(g):
        for n, part in zip(nodes, np.split(g, sizes, axis=axis)):
            _acc(n, part)

    return _make(value, nodes, fn)


def take(x, index):
    """``x[index]`` for an integer or slice ``index`` on the first axis."""
    x = const(x)

    def fn(g):
        if not x.needs_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        x.grad[index] += g

    return _make(x.value[index], (x,), fn)


def take_last(x, index):
    """``x[..., index]`` for a slice on the last axis."""
    x = const(x)

    def fn(g):
        if not x.needs_grad:
            return
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        x.grad[..., index] += g

    return _make(x.value[..., index], (x,), fn)


def stack(nodes):
    nodes = [const(n) for n in nodes]

    def fn(g):
        for k, n in enumerate(nodes):
            _acc(n, g[k])

    return _make(np.stack([n.value for n in nodes]), nodes, fn)


def straight_through(x, fn_value):
    """Forward ``fn_value(x)``, backward as identity."""
    x = const(x)
    return _make(fn_value(x.value), (x,), lambda g: _acc(x, g))


def total(x):
    x = const(x)
    return _make(x.value.sum(), (x,), lambda g: _acc(x, np.broadcast_to(g, x.shape)))


def mean(x):
    x = const(x)
    n = x.value.size
    return _make(x.value.mean(), (x,), lambda g: _acc(x, np.broadcast_to(g / n, x.shape)))


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    x = const(logits)
    t = np.asarray(targets, dtype=np.float64)
    _check_same(x.value, t, "bce_with_logits")
    v = x.value
    loss = np.maximum(v, 0.0) - v * t + np.log1p(np.exp(-np.abs(v)))
    n = v.size

    def fn(g):
        _acc(x, g * (_sigmoid(v) - t) / n)

    return _make(loss.mean(), (x,), fn)


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def bce_numpy(logits, targets) -> float:
    v = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    return float((np.maximum(v, 0.0) - v * t + np.log1p(np.exp(-np.abs(v)))).mean())


# --------------------------------------------------------------------------
# parameters and optimisation


class ParamStore:
    """Named float64 arrays plus Adam moment estimates."""

    def __init__(self, arrays=None):
        self.arrays = {}
        self.m = {}
        self.v = {}
        self.step = 0
        for name, a in (arrays or {}).items():
            self.add(name, a)

    def add(self, name, array):
        if name in self.arrays:
            raise KeyError(f"duplicate parameter {name!r}")
        self.arrays[name] = np.array(array, dtype=np.float64)

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def leaves(self, trainable=True) -> dict:
        """Fresh graph nodes for every parameter (constants if not trainable)."""
        make = leaf if trainable else const
        return {k: make(a) for k, a in self.arrays.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore({k: a.copy() for k, a in self.arrays.items()})
        out.m = {k: a.copy() for k, a in self.m.items()}
        out.v = {k: a.copy() for k, a in self.v.items()}
        out.step = self.step
        return out

    def num_values(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def tobytes(self) -> bytes:
        return b"".join(self.arrays[k].tobytes() for k in sorted(self.arrays))


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def adam_step(params: ParamStore, grads: dict, cfg: AdamConfig) -> ParamStore:
    """One bias-corrected Adam update in place; weight decay is decoupled."""
    params.step += 1
    t = params.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, g in grads.items():
        if g is None:
            continue
        p = params.arrays[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        m = params.m.setdefault(name, np.zeros_like(p))
        v = params.v.setdefault(name, np.zeros_like(p))
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        if cfg.weight_decay:
            p -= cfg.lr * cfg.weight_decay * p
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params


def grad_check(build_loss, params: ParamStore, h=1e-5, samples=32, rng=None, floor=1e-6):
    """Largest relative error between reverse-mode and central-difference gradients.

    ``build_loss(nodes)`` receives a dict of parameter nodes and returns a
    scalar loss node.  ``samples`` coordinates are drawn uniformly over all
    parameters.  The error of one coordinate is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    nodes = params.leaves()
    loss = build_loss(nodes)
    backward(loss)
    analytic = {k: (n.grad if n.grad is not None else np.zeros_like(n.value)) for k, n in nodes.items()}

    names = list(params.arrays)
    sizes = np.array([params[k].size for k in names])
    flat = rng.choice(sizes.sum(), size=min(samples, sizes.sum()), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def value():
        return float(build_loss(params.leaves(trainable=False)).value)

    worst = 0.0
    for f in flat:
        k = int(np.searchsorted(offsets, f, side="right") - 1)
        name, idx = names[k], int(f - offsets[k])
        arr = params.arrays[name].reshape(-1)
        old = arr[idx]
        arr[idx] = old + h
        up = value()
        arr[idx] = old - h
        down = value()
        arr[idx] = old
        numeric = (up - down) / (2 * h)
        a = analytic[name].reshape(-1)[idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# persistence: magic, u32 version, u32 count, then per array name/rank/dims/payload

_NET_MAGIC = b"STNW"
_NET_VERSION = 1


def save_arrays(path, arrays: dict):
    with open(path, "wb") as fh:
        fh.write(_NET_MAGIC)
        fh.write(struct.pack("<II", _NET_VERSION, len(arrays)))
        for name, a in arrays.items():
            a = np.asarray(a, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", a.ndim))
            fh.write(struct.pack(f"<{a.ndim}I", *a.shape))
            fh.write(a.tobytes())


def load_arrays(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _NET_MAGIC:
        raise ValueError(f"{path}: not an STNW file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != _NET_VERSION:
        raise ValueError(f"{path}: unsupported STNW version {version}")
    pos = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos : pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(dims).copy()
        pos += 8 * size
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes")
    return out


# --------------------------------------------------------------------------
# plain MLP helpers shared by the models


def init_affine(params: ParamStore, prefix: str, fan_in: int, fan_out: int, rng, zero=False):
    bound = 1.0 / np.sqrt(fan_in)
    W = np.zeros((fan_in, fan_out)) if zero else rng.uniform(-bound, bound, (fan_in, fan_out))
    params.add(f"{prefix}.W", W)
    params.add(f"{prefix}.b", np.zeros(fan_out))


def init_mlp(params: ParamStore, prefix: str, dims, rng, zero_last=False):
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        init_affine(params, f"{prefix}.{i}", a, b, rng, zero=zero_last and last)


def mlp(nodes: dict, prefix: str, x, depth: int, act=relu):
    """Affine layers ``prefix.0 .. prefix.{depth-1}`` with ``act`` between them."""
    for i in range(depth):
        x = affine(x, nodes[f"{prefix}.{i}.W"], nodes[f"{prefix}.{i}.b"])
        if i < depth - 1:
            x = act(x)
    return x


def mlp_numpy(arrays, prefix: str, x, depth: int, act=lambda v: np.where(v > 0, v, 0.0)):
    for i in range(depth):
        x = x @ arrays[f"{prefix}.{i}.W"] + arrays[f"{prefix}.{i}.b"]
        if i < depth - 1:
            x = act(x)
    return x
