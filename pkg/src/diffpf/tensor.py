"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that track
gradients link the result to its inputs together with a closure that maps
the output gradient to input gradients. :func:`backward` orders the reachable
graph topologically (a :class:`ComputationRecord`) and sweeps it once in
reverse.

Broadcasting is limited to scalar-with-tensor and equal shapes; row-vector
bias addition has its own op (:func:`add_bias`).
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from diffpf import kernels

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out.op = op
    return out


def _broadcast_shape(a, b, op):
    if a.shape == b.shape:
        return a.shape
    if a.size == 1 and a.ndim == 0:
        return b.shape
    if b.size == 1 and b.ndim == 0:
        return a.shape
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape} "
                     "(only scalar-with-tensor and equal shapes broadcast)")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def scale(a, c):
    """Multiply by a constant (non-differentiable) scalar."""
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        return (g * a.data.dtype.type(c),)

    return _make(a.data * a.data.dtype.type(c), (a,), bw, "scale")


def _sigmoid(x):
    # tanh form never overflows
    half = x.dtype.type(0.5)
    return half + half * np.tanh(half * x)


def silu(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)

    def bw(g):
        return (g * (s * (1.0 + a.data * (1.0 - s))),)

    return _make(a.data * s, (a,), bw, "silu")


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)

    def bw(g):
        return (g * y,)

    return _make(y, (a,), bw, "exp")


def square(a):
    a = as_tensor(a)

    def bw(g):
        return (g * (2.0 * a.data),)

    return _make(a.data * a.data, (a,), bw, "square")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "silu": silu,
    "exp": exp,
    "square": square,
}


def elementwise(op_kind, inputs):
    """Dispatch by name: ``elementwise("add", [a, b])``, ``elementwise("scale", [a, c])``."""
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*inputs)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} @ {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def add_bias(x, b):
    """x[..., n] + b[n] with the bias broadcast over leading dimensions."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match trailing extent of {x.shape}")

    def bw(g):
        return g, g.reshape(-1, b.shape[0]).sum(axis=0)

    return _make(x.data + b.data, (x, b), bw, "add_bias")


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add_bias(y, b)


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of ``x`` [B×C_in×H×W] (or unbatched [C_in×H×W]) with
    kernels ``w`` [C_out×C_in×kh×kw]; optional per-channel bias ``b``."""
    x, w = as_tensor(x), as_tensor(w)
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: stride must be >= 1 and padding >= 0, got {stride}, {padding}")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected input [B,C,H,W] and kernels [O,C,kh,kw], got {x.shape}, {w.shape}")
    B, C, H, W = xd.shape
    O, Ck, kh, kw = w.shape
    if Ck != C:
        raise ShapeError(f"conv2d: input has {C} channels, kernels expect {Ck}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d: non-positive output extent {Ho}x{Wo} for input {H}x{W}, "
                         f"kernel {kh}x{kw}, stride {stride}, padding {padding}")
    cols = kernels.im2col(xd, kh, kw, stride, padding)
    wmat = w.data.reshape(O, -1)
    out = (cols @ wmat.T).reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out)
    if unbatched:
        out = out[0]
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g4 = g[None] if unbatched else g
        gmat = g4.transpose(0, 2, 3, 1).reshape(-1, O)
        gw = (gmat.T @ cols).reshape(w.shape)
        if not x.requires_grad:
            gx = None
        else:
            gx = kernels.col2im(gmat @ wmat, xd.shape, kh, kw, stride, padding)
        if unbatched and gx is not None:
            gx = gx[0]
        if b is None:
            return gx, gw
        return gx, gw, g4.sum(axis=(0, 2, 3))

    return _make(out, parents, bw, "conv2d")


# ---------------------------------------------------------------- structural


def reshape(a, shape):
    a = as_tensor(a)

    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, bw, "concat")


def sum(a, axis=None):  # noqa: A001 - mirrors numpy
    a = as_tensor(a)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis), dtype=a.dtype), (a,), bw, "sum")


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


# ---------------------------------------------------------------- backward


class ComputationRecord:
    """Topologically ordered operations reachable from a root tensor.

    Every node's inputs precede it in ``nodes``; :meth:`sweep` visits each
    node once, in reverse order.
    """

    def __init__(self, root):
        self.root = root
        self.nodes = self._toposort(root)

    @staticmethod
    def _toposort(root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return order

    def sweep(self, seed):
        grads = {id(self.root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad or pg is None:
                    continue
                pg = np.asarray(pg, dtype=parent.dtype)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def backward(loss):
    """Populate ``.grad`` of every gradient-tracking leaf reachable from ``loss``.

    Gradients accumulate into existing buffers; call ``zero_grad`` between steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must have exactly one element, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any gradient-tracking tensor")
    ComputationRecord(loss).sweep(np.ones_like(loss.data))


def gradcheck(fn, inputs, eps=1e-4, seed=0):
    """Relative error between analytic and central-difference gradients.

    ``fn`` maps the list of input tensors to an output tensor of any shape; it
    is contracted with a fixed random projection to a scalar. Returns the
    largest per-input relative error ``|g_a - g_n| / max(|g_a|, |g_n|)`` taken
    over the flattened gradient (2-norms).
    """
    rng = np.random.default_rng(seed)
    xs = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    probe = fn(xs)
    proj = rng.normal(size=probe.shape)

    def scalar(vals):
        with no_grad():
            out = fn([Tensor(v) for v in vals])
        return float(np.sum(out.data * proj))

    loss = sum(mul(fn(xs), Tensor(proj)))
    backward(loss)
    worst = 0.0
    base = [x.data.copy() for x in xs]
    for i, x in enumerate(xs):
        num = np.zeros_like(base[i])
        flat = num.reshape(-1)
        for j in range(base[i].size):
            plus = [b.copy() for b in base]
            minus = [b.copy() for b in base]
            plus[i].reshape(-1)[j] += eps
            minus[i].reshape(-1)[j] -= eps
            flat[j] = (scalar(plus) - scalar(minus)) / (2 * eps)
        ana = x.grad if x.grad is not None else np.zeros_like(num)
        denom = max(np.linalg.norm(ana), np.linalg.norm(num), 1e-12)
        worst = max(worst, float(np.linalg.norm(ana - num) / denom))
    return worst
