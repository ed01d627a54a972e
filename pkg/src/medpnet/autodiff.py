"""Minimal dense-tensor engine with reverse-mode differentiation.

Tensors are 64-bit, at most 3 axes, and carry the recorded operation
graph, so a backward pass is one reverse-topological sweep from the loss
node. There is no broadcasting beyond scalars (plus the explicit
``add_bias``/``layer_norm`` row conventions); shape errors are raised
eagerly with both shapes in the message.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import BackwardBeforeForward, ShapeMismatch

_SHAPE_LOG: list | None = None


@contextmanager
def record_shapes():
    """Collect the shape of every tensor allocated inside the block.

    Used by tests to audit that linear-attention code never materializes
    an n-by-n intermediate.
    """
    global _SHAPE_LOG
    prev = _SHAPE_LOG
    _SHAPE_LOG = []
    try:
        yield _SHAPE_LOG
    finally:
        _SHAPE_LOG = prev


class Tensor:
    """Dense float64 array plus its position in the recorded op graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 3:
            raise ShapeMismatch(f"tensors support up to 3 axes, got shape {self.data.shape}")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = None
        if _SHAPE_LOG is not None:
            _SHAPE_LOG.append(self.data.shape)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x, dtype=np.float64))


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def backward(loss: Tensor):
    """Populate gradients of every ancestor of a scalar loss.

    Each node is visited exactly once, in reverse topological order, so a
    tensor feeding k consumers accumulates exactly k contributions.
    """
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Primitives (forward + registered backward)
# ---------------------------------------------------------------------------

def _require_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, parents=(a, b))

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    out._backward = bwd
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, parents=(a, b))

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    out._backward = bwd
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, parents=(a, b))

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    out._backward = bwd
    return out


def scale(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    out = Tensor(a.data * s, parents=(a,))
    out._backward = lambda g: _accum(a, g * s)
    return out


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _require_same_shape(a, b, "elementwise_mul")
    out = Tensor(a.data * b.data, parents=(a, b))

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    out._backward = bwd
    return out


def leaky_relu(a: Tensor, alpha: float = 0.01) -> Tensor:
    a = as_tensor(a)
    mask = np.where(a.data > 0.0, 1.0, alpha)
    out = Tensor(a.data * mask, parents=(a,))
    out._backward = lambda g: _accum(a, g * mask)
    return out


def softmax(a: Tensor, axis: int) -> Tensor:
    """Softmax along ``axis``; each slice sums to 1 within 1e-12."""
    a = as_tensor(a)
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(y, parents=(a,))

    def bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        _accum(a, (g - dot) * y)

    out._backward = bwd
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize along one axis, then apply per-feature gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    ax = axis % x.ndim
    m = x.shape[ax]
    if gain.shape != (m,) or bias.shape != (m,):
        raise ShapeMismatch(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs axis size {m}")
    shape = [1] * x.ndim
    shape[ax] = m
    gview = gain.data.reshape(shape)
    bview = bias.data.reshape(shape)
    mu = np.mean(x.data, axis=ax, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gview + bview, parents=(x, gain, bias))

    def bwd(g):
        sum_axes = tuple(i for i in range(x.ndim) if i != ax)
        _accum(bias, np.sum(g, axis=sum_axes))
        _accum(gain, np.sum(g * xhat, axis=sum_axes))
        gx = g * gview
        # d/dx of (x - mu) * inv along the normalized axis
        gsum = np.sum(gx, axis=ax, keepdims=True)
        gdot = np.sum(gx * xhat, axis=ax, keepdims=True)
        _accum(x, inv * (gx - gsum / m - xhat * gdot / m))

    out._backward = bwd
    return out


def reduce_max(a: Tensor, axis: int) -> Tensor:
    """Max along one axis; ties route the gradient to the first maximizer."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out_data = np.max(a.data, axis=axis)
    out = Tensor(out_data, parents=(a,))

    def bwd(g):
        full = np.zeros_like(a.data)
        grid = np.indices(out_data.shape)
        index = list(grid)
        index.insert(axis % a.ndim, idx)
        full[tuple(index)] = g
        _accum(a, full)

    out._backward = bwd
    return out


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.mean(a.data, axis=axis), parents=(a,))
    count = a.data.size if axis is None else a.shape[axis]

    def bwd(g):
        if axis is None:
            _accum(a, np.full_like(a.data, float(g) / count))
        else:
            _accum(a, np.expand_dims(g, axis) * np.ones_like(a.data) / count)

    out._backward = bwd
    return out


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axis), parents=(a,))

    def bwd(g):
        if axis is None:
            _accum(a, np.full_like(a.data, float(g)))
        else:
            _accum(a, np.expand_dims(g, axis) * np.ones_like(a.data))

    out._backward = bwd
    return out


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    out._backward = bwd
    return out


def gather_rows(a: Tensor, indices) -> Tensor:
    """Row lookup: out[r] = a[indices[r]]."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if np.any(idx < 0) or np.any(idx >= a.shape[0]):
        raise IndexError(f"gather_rows: indices outside [0, {a.shape[0]})")
    out = Tensor(a.data[idx], parents=(a,))

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    out._backward = bwd
    return out


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), parents=(a,))
    out._backward = lambda g: _accum(a, g.reshape(a.shape))
    return out


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose expects 2 axes, got {a.shape}")
    out = Tensor(a.data.T, parents=(a,))
    out._backward = lambda g: _accum(a, g.T)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"slice_cols expects 2 axes, got {a.shape}")
    out = Tensor(a.data[:, start:stop], parents=(a,))

    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accum(a, full)

    out._backward = bwd
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-m bias along the last axis of x (explicit row broadcast)."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"add_bias: {x.shape} + {b.shape}")
    out = Tensor(x.data + b.data, parents=(x, b))

    def bwd(g):
        _accum(x, g)
        _accum(b, g.sum(axis=tuple(range(x.ndim - 1))) if x.ndim > 1 else g)

    out._backward = bwd
    return out


def huber_loss(pred: Tensor, target: Tensor, delta: float) -> Tensor:
    """Mean Huber value: quadratic inside |a| <= delta, linear outside."""
    pred, target = as_tensor(pred), as_tensor(target)
    _require_same_shape(pred, target, "huber_loss")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    a = pred.data - target.data
    absa = np.abs(a)
    quad = absa <= delta
    vals = np.where(quad, 0.5 * a * a, delta * (absa - 0.5 * delta))
    out = Tensor(np.mean(vals), parents=(pred, target))
    n = a.size

    def bwd(g):
        d = np.where(quad, a, delta * np.sign(a)) * (float(g) / n)
        _accum(pred, d)
        _accum(target, -d)

    out._backward = bwd
    return out


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy of row-wise softmax against integer targets."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeMismatch(f"softmax_cross_entropy expects 2 axes, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, m = logits.shape
    if t.shape[0] != n or np.any(t < 0) or np.any(t >= m):
        raise ShapeMismatch(f"targets {t.shape} invalid for logits {logits.shape}")
    shifted = logits.data - np.max(logits.data, axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    losses = np.log(p[rows, t].clip(1e-300))
    out = Tensor(-np.mean(losses), parents=(logits,))

    def bwd(g):
        d = p.copy()
        d[rows, t] -= 1.0
        _accum(logits, d * (float(g) / n))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# Parameters, optimizer, checkpoints
# ---------------------------------------------------------------------------

class ParamStore:
    """Named trainable tensors plus SGD momentum buffers."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self._velocity: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if " " in name:
            raise ValueError("parameter names must not contain spaces")
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        self._velocity[name] = np.zeros_like(t.data)
        return t

    def glorot(self, name: str, shape: tuple[int, ...], rng: np.random.Generator) -> Tensor:
        """Uniform init in +/- sqrt(6 / (fan_in + fan_out))."""
        fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], shape[0])
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-limit, limit, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def gradient(self, name: str) -> np.ndarray:
        """Gradient of one parameter; zeros when it never joined a graph."""
        p = self.params[name]
        return p.grad if p.grad is not None else np.zeros_like(p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def sgd_step(self, lr: float, momentum: float = 0.0):
        """p <- p - lr * v with v <- momentum * v + grad."""
        if all(p.grad is None for p in self.params.values()):
            raise BackwardBeforeForward("no gradients present; run backward() first")
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            v = self._velocity[name]
            v *= momentum
            v += g
            p.data = p.data - lr * v

    def save(self, path):
        """Text checkpoint: one parameter per line, 17 significant digits."""
        with open(path, "w") as f:
            f.write("medpnet-params 1\n")
            for name in self.params:
                data = self.params[name].data
                fields = [name, str(data.ndim)]
                fields += [str(d) for d in data.shape]
                fields += [f"{v:.17g}" for v in data.reshape(-1)]
                f.write(" ".join(fields) + "\n")

    @classmethod
    def load(cls, path) -> "ParamStore":
        store = cls()
        with open(path) as f:
            header = f.readline().strip()
            if header != "medpnet-params 1":
                raise ValueError(f"unrecognized checkpoint header: {header!r}")
            for line in f:
                fields = line.split()
                if not fields:
                    continue
                name = fields[0]
                ndim = int(fields[1])
                shape = tuple(int(d) for d in fields[2 : 2 + ndim])
                vals = np.array([float(v) for v in fields[2 + ndim :]], dtype=np.float64)
                store.add(name, vals.reshape(shape))
        return store


def finite_diff_check(f, params, h: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a pure closure over ``params`` returning a scalar Tensor.
    The relative error uses a max(1, |analytic|) denominator. Non-smooth
    points (e.g. the Huber kink at |a| = delta) are the caller's
    responsibility to avoid.
    """
    for p in params:
        p.grad = None
    backward(f())
    analytic = [np.array(p.grad) if p.grad is not None else np.zeros_like(p.data) for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lp = f().item()
            flat[j] = orig - h
            lm = f().item()
            flat[j] = orig
            num = (lp - lm) / (2.0 * h)
            worst = max(worst, abs(num - gflat[j]) / max(1.0, abs(gflat[j])))
    return worst
