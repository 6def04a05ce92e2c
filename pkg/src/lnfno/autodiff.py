"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable op creates a node stamped with a monotonically
increasing id. Node ids therefore give a topological order of the graph
(insertion order), and ``backward`` walks the reachable nodes in reverse id
order, visiting each exactly once and summing gradients at fan-out.

Broadcasting is deliberately absent except for a scalar right operand in
``binary_ewise`` (the fusion scale) and the bias terms of ``linear`` and
``conv_nd``. Convolution is cross-correlation (no kernel flip).
"""

import itertools
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

_node_ids = itertools.count()


class Tensor:
    """A float64 array plus its place on the autodiff tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._id = next(_node_ids)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        return backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return binary_ewise(self, _as_tensor(other), "add")

    def __sub__(self, other):
        return binary_ewise(self, _as_tensor(other), "sub")

    def __mul__(self, other):
        return binary_ewise(self, _as_tensor(other), "mul")

    def __rmul__(self, other):
        return binary_ewise(self, _as_tensor(other), "mul")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_tensor(shape, fill=0.0, requires_grad=False, name=None):
    """Build a tensor of ``shape`` from a scalar fill or a flat row-major buffer."""
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0 or any(s < 1 for s in shape):
        raise DimensionError(f"shape must be nonempty with entries >= 1, got {shape}")
    n = int(np.prod(shape))
    if np.isscalar(fill):
        data = np.full(shape, float(fill))
    else:
        buf = np.asarray(fill, dtype=np.float64).ravel()
        if buf.size != n:
            raise DimensionError(f"buffer length {buf.size} does not match shape {shape} ({n})")
        data = buf.reshape(shape).copy()
    return Tensor(data, requires_grad=requires_grad, name=name)


def _node(data, parents, backward_fn):
    """Create an op output; records a tape node only if some parent needs grad."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires-grad leaf.

    Returns a dict mapping each such leaf to its (accumulated) gradient.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on the tape")
    # collect reachable nodes
    seen = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in seen:
            continue
        seen[t._id] = t
        stack.extend(p for p in t._parents if p.requires_grad)
    grads = {loss._id: np.ones_like(loss.data)}
    leaves = {}
    for nid in sorted(seen, reverse=True):
        t = seen[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if t._backward is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            leaves[t] = t.grad
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p._id in grads:
                grads[p._id] = grads[p._id] + pg
            else:
                grads[p._id] = pg
    return leaves


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def bw(g):
        return (g @ B.T if a.requires_grad else None,
                A.T @ g if b.requires_grad else None)

    return _node(A @ B, (a, b), bw)


def linear(x, w, b=None):
    """``x @ w + b`` for x of shape [batch, in], w [in, out], b [out]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: bad shapes {x.shape} @ {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
    X, W = x.data, w.data
    out = X @ W
    if b is not None:
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        gx = g @ W.T if x.requires_grad else None
        gw = X.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _node(out, parents, bw)


def transpose(x, axes=None):
    axes = tuple(reversed(range(x.data.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


# ---------------------------------------------------------------- elementwise

def binary_ewise(a, b, kind):
    """add/sub/mul of equal shapes, or with ``b`` a scalar tensor."""
    if kind not in ("add", "sub", "mul"):
        raise ConfigurationError(f"unknown elementwise kind {kind!r}")
    scalar_b = b.data.size == 1 and a.shape != b.shape
    if not scalar_b and a.shape != b.shape:
        raise DimensionError(f"incompatible shapes {a.shape} and {b.shape}")
    A = a.data
    B = b.data.reshape(()) if scalar_b else b.data

    def reduce_b(gb):
        return np.array(gb.sum()).reshape(b.shape) if scalar_b else gb

    if kind == "add":
        out = A + B

        def bw(g):
            return g, (reduce_b(g) if b.requires_grad else None)
    elif kind == "sub":
        out = A - B

        def bw(g):
            return g, (reduce_b(-g) if b.requires_grad else None)
    else:
        out = A * B

        def bw(g):
            return (g * B if a.requires_grad else None,
                    reduce_b(g * A) if b.requires_grad else None)

    return _node(out, (a, b), bw)


def scale(x, c):
    """Multiply by a Python constant (not a tape parameter)."""
    c = float(c)
    return _node(x.data * c, (x,), lambda g: (g * c,))


def add_const(x, c):
    return _node(x.data + float(c), (x,), lambda g: (g,))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


ACTIVATIONS = ("tanh", "relu", "softplus", "sinh")


def activation(x, kind):
    X = x.data
    if kind == "tanh":
        out = np.tanh(X)
        return _node(out, (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "relu":
        out = np.maximum(X, 0.0)
        return _node(out, (x,), lambda g: (g * (X > 0),))
    if kind == "softplus":
        out = np.logaddexp(0.0, X)
        return _node(out, (x,), lambda g: (g * _sigmoid(X),))
    if kind == "sinh":
        return _node(np.sinh(X), (x,), lambda g: (g * np.cosh(X),))
    raise ConfigurationError(f"unknown activation {kind!r}")


def tanh(x):
    return activation(x, "tanh")


def tsqrt(x):
    """Square root; the gradient at exactly 0 is taken as 0 (subgradient)."""
    out = np.sqrt(x.data)

    def bw(g):
        d = np.zeros_like(out)
        nz = out > 0
        d[nz] = 0.5 / out[nz]
        return (g * d,)

    return _node(out, (x,), bw)


def tsum(x, axis=None):
    X = x.data
    out = X.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, X.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), X.shape).copy(),)

    return _node(np.asarray(out), (x,), bw)


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of nothing")
    nd = tensors[0].data.ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.data.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(f"concat operands disagree off axis {ax}: "
                                 f"{[t.shape for t in tensors]}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tensors, bw)


def slice_axis(x, start, stop, axis=0):
    ax = axis % x.data.ndim
    n = x.shape[ax]
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis of length {n}")
    idx = (slice(None),) * ax + (slice(start, stop),)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _node(x.data[idx].copy(), (x,), bw)


def shape_ops(x, op, *args, **kwargs):
    """Dispatcher over reshape / concat / slice (concat takes a list as ``x``)."""
    if op == "reshape":
        return reshape(x, *args, **kwargs)
    if op == "concat":
        return concat(x, *args, **kwargs)
    if op == "slice":
        return slice_axis(x, *args, **kwargs)
    raise ConfigurationError(f"unknown shape op {op!r}")


# ---------------------------------------------------------------- convolution

def _out_size(L, k, s, p):
    return (L + 2 * p - k) // s + 1


def conv_nd(x, w, b=None, stride=1, padding=0, dims=None):
    """N-d cross-correlation with zero padding.

    x: [C_in, *spatial] or [B, C_in, *spatial]; w: [C_out, C_in, *kernel];
    b: [C_out] or None. Returns the matching unbatched/batched output.
    """
    dims = w.data.ndim - 2 if dims is None else int(dims)
    if dims not in (1, 2, 3) or w.data.ndim != dims + 2:
        raise DimensionError(f"weight rank {w.data.ndim} incompatible with dims={dims}")
    X = x.data
    batched = X.ndim == dims + 2
    if not batched and X.ndim != dims + 1:
        raise DimensionError(f"input rank {X.ndim} incompatible with dims={dims}")
    if not batched:
        X = X[None]
    B_, C = X.shape[:2]
    W = w.data
    O, Ci = W.shape[:2]
    if Ci != C:
        raise DimensionError(f"input has {C} channels, weight expects {Ci}")
    if b is not None and b.shape != (O,):
        raise DimensionError(f"bias shape {b.shape} != ({O},)")
    ks = W.shape[2:]
    sp = X.shape[2:]
    out_sp = tuple(_out_size(L, k, stride, padding) for L, k in zip(sp, ks))
    if any(n < 1 for n in out_sp):
        raise DimensionError(f"conv output size {out_sp} < 1 for input {sp}, kernel {ks}")
    P = int(np.prod(out_sp))
    K = int(np.prod(ks))
    xp = np.pad(X, [(0, 0), (0, 0)] + [(padding, padding)] * dims) if padding else X
    offsets = list(np.ndindex(*ks))
    windows = [tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(off, out_sp))
               for off in offsets]
    cols = np.empty((B_, C, K) + out_sp)
    for i, sl in enumerate(windows):
        cols[:, :, i] = xp[(slice(None), slice(None)) + sl]
    cols = cols.reshape(B_, C * K, P)
    wf = W.reshape(O, C * K)
    out = np.matmul(wf, cols)
    if b is not None:
        out += b.data[:, None]
    out = out.reshape((B_, O) + out_sp)
    if not batched:
        out = out[0]
    pshape = xp.shape

    def bw(g):
        g = g.reshape(B_, O, P)
        gw = gb = gx = None
        if w.requires_grad:
            gw = np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(W.shape)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(wf.T, g).reshape((B_, C, K) + out_sp)
            gxp = np.zeros(pshape)
            for i, sl in enumerate(windows):
                gxp[(slice(None), slice(None)) + sl] += gcols[:, :, i]
            if padding:
                crop = (slice(None), slice(None)) + tuple(slice(padding, padding + L) for L in sp)
                gxp = gxp[crop]
            gx = gxp if batched else gxp[0]
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw)


# ---------------------------------------------------------------- pooling

@lru_cache(maxsize=64)
def _pool_matrix(n_in, n_out):
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        s = (i * n_in) // n_out
        e = -((-(i + 1) * n_in) // n_out)
        m[i, s:e] = 1.0 / (e - s)
    m.setflags(write=False)
    return m


def adaptive_avg_pool2d(x, out):
    """Average over windows [floor(iH/h), ceil((i+1)H/h)); x is [C,H,W] or [B,C,H,W].

    Targets larger than the input give overlapping windows (upsampling).
    """
    h, w_ = out
    H, W = x.shape[-2:]
    if x.data.ndim not in (3, 4):
        raise DimensionError(f"adaptive_avg_pool2d expects rank 3 or 4, got {x.shape}")
    if h < 1 or w_ < 1:
        raise DimensionError(f"pool target {(h, w_)} must be positive")
    ph = _pool_matrix(H, h)
    pw = _pool_matrix(W, w_)
    res = ph @ x.data @ pw.T
    return _node(res, (x,), lambda g: (ph.T @ g @ pw,))
