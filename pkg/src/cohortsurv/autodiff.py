"""Reverse-mode automatic differentiation on dense 2-D arrays.

Everything in the model is a 2-D matrix (scalars are 1x1, vectors are rows).
Each primitive builds a node holding references to its inputs and a closure
that propagates the output gradient; ``backward`` replays the recorded nodes
in reverse topological order.  float64 is the default dtype; float32 is
supported for training speed and selected per tensor at creation.

Broadcasting is limited to row vectors (1,n), column vectors (m,1) and
scalars (1,1) against (m,n) operands.
"""
from __future__ import annotations

import itertools
import threading

import numpy as np

from .errors import ContractViolation, ShapeError

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
COSINE_EPS = 1e-8
LAYER_NORM_EPS = 1e-5

_SEQ = itertools.count()
_STATE = threading.local()


def grad_enabled() -> bool:
    return not getattr(_STATE, "no_grad", False)


class no_grad:
    """Context manager that disables graph recording (evaluation fast path)."""

    def __enter__(self):
        self._prev = getattr(_STATE, "no_grad", False)
        _STATE.no_grad = True
        return self

    def __exit__(self, *exc):
        _STATE.no_grad = self._prev
        return False


class Tensor:
    """A 2-D float array with optional gradient tracking.

    ``grad`` is ``None`` while cleared; a cleared gradient means zero.
    Gradients accumulate across backward passes until explicitly cleared
    (``sgd_step`` clears them after applying the update).
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype != np.float64 and arr.dtype != np.float32:
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D matrices; got array of shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._seq = next(_SEQ)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() requires a scalar tensor; shape is {self.data.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        """A constant view of this tensor's values, cut off from the graph."""
        return Tensor(self.data)

    # -- operator sugar (routes through the primitives below) --------------
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _wrap(-1.0, self))

    def __sub__(self, other):
        return add(self, mul(_wrap(other, self), _wrap(-1.0, self)))

    def __rsub__(self, other):
        return add(_wrap(other, self), mul(self, _wrap(-1.0, self)))

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable tensor with a unique name within its model."""

    __slots__ = ("name", "_fused", "fuse_ok")

    def __init__(self, data, name: str = "", fuse_ok: bool = False):
        super().__init__(np.array(data, dtype=np.asarray(data).dtype), requires_grad=True)
        self.name = name
        self._fused = None  # set by FusedSGD to defer matmul weight updates
        self.fuse_ok = fuse_ok


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = True
    t.grad = None
    t._parents = parents
    t._backward = backward
    t._seq = next(_SEQ)
    rec = getattr(_STATE, "tape", None)
    if rec is not None:
        rec.nodes.append(t)
    return t


def _accum(t: Tensor, g: np.ndarray):
    """Accumulate a possibly-borrowed gradient array (copies on first touch)."""
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _accum_owned(t: Tensor, g: np.ndarray):
    """Accumulate a freshly-allocated gradient array (takes ownership)."""
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


class Tape:
    """Explicit record of primitive applications in execution order.

    Execution order is a valid topological order because inputs always exist
    before the operation that consumes them.  While a tape is active, nodes
    append themselves at creation, which lets ``backward`` walk the record
    directly instead of rediscovering the graph.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        self._prev = getattr(_STATE, "tape", None)
        _STATE.tape = self
        return self

    def __exit__(self, *exc):
        _STATE.tape = self._prev
        return False


def tape(root: Tensor) -> list:
    """Nodes reachable from ``root``, in topological order (inputs first)."""
    seen = set()
    out = []
    stack = [root]
    while stack:
        node = stack.pop()
        i = id(node)
        if i in seen:
            continue
        seen.add(i)
        out.append(node)
        for p in node._parents:
            if p.requires_grad:
                stack.append(p)
    out.sort(key=lambda n: n._seq)
    return out


def backward(loss: Tensor, recorded=None):
    """Fill gradients of everything reachable from a scalar loss.

    ``recorded`` may pass the node list of an active ``Tape``; otherwise the
    graph is walked from the loss.  Parameters not reachable from the loss
    keep a cleared (= zero) gradient.
    """
    if loss.data.shape != (1, 1):
        raise ContractViolation(f"backward requires a scalar loss; shape is {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractViolation("backward requires a loss recorded on the tape")
    order = tape(loss) if recorded is None else recorded
    loss.grad = np.ones((1, 1), dtype=loss.data.dtype)
    for node in reversed(order):
        bw = node._backward
        if bw is not None and node.grad is not None:
            bw(node.grad)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

_BROADCAST_OK = ((1, 1), (1, 0), (0, 1))  # flags: (row broadcast, col broadcast)


def _check_broadcast(sa, sb, op):
    if sa == sb:
        return
    if (sa[0] == sb[0] or sa[0] == 1 or sb[0] == 1) and (sa[1] == sb[1] or sa[1] == 1 or sb[1] == 1):
        return
    raise ShapeError(f"{op} shape mismatch: {sa} vs {sb}")


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    r = g
    if shape[0] == 1 and r.shape[0] > 1:
        r = r.sum(axis=0, keepdims=True)
    if shape[1] == 1 and r.shape[1] > 1:
        r = r.sum(axis=1, keepdims=True)
    return r


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data.shape, b.data.shape, "add")
    out = a.data + b.data
    if not (grad_enabled() and (a.requires_grad or b.requires_grad)):
        return Tensor(out)

    def bw(g):
        if a.requires_grad:
            r = _reduce_to(g, a.data.shape)
            _accum(a, r) if r is g else _accum_owned(a, r)
        if b.requires_grad:
            r = _reduce_to(g, b.data.shape)
            _accum(b, r) if r is g else _accum_owned(b, r)

    return _node(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data.shape, b.data.shape, "mul")
    out = a.data * b.data
    if not (grad_enabled() and (a.requires_grad or b.requires_grad)):
        return Tensor(out)

    def bw(g):
        if a.requires_grad:
            _accum_owned(a, _reduce_to(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum_owned(b, _reduce_to(g * a.data, b.data.shape))

    return _node(out, (a, b), bw)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data
    if not (grad_enabled() and (a.requires_grad or b.requires_grad)):
        return Tensor(out)

    def bw(g):
        if a.requires_grad:
            _accum_owned(a, g @ b.data.T)
        if b.requires_grad:
            pend = getattr(b, "_fused", None)
            if pend is not None:
                pend.append((b, a.data, g))
            elif a.data.shape[0] == 1:
                _accum_owned(b, a.data.T * g)  # rank-1 outer, faster than gemm
            else:
                _accum_owned(b, a.data.T @ g)

    return _node(out, (a, b), bw)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    out = a.data.T  # view; downstream ops handle strides
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)

    def bw(g):
        _accum(a, g.T)

    return _node(out, (a,), bw)


def slice_cols(a, start: int, width: int) -> Tensor:
    """Contiguous column slice; the gradient scatters back into place."""
    a = as_tensor(a)
    if not (0 <= start and start + width <= a.data.shape[1]):
        raise ShapeError(
            f"column slice [{start}:{start + width}] out of range for shape {a.data.shape}")
    out = a.data[:, start:start + width]
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[:, start:start + width] += g

    return _node(out, (a,), bw)


def slice_rows(a, start: int, count: int) -> Tensor:
    """Contiguous row slice; the gradient scatters back into place."""
    a = as_tensor(a)
    if not (0 <= start and start + count <= a.data.shape[0]):
        raise ShapeError(
            f"row slice [{start}:{start + count}] out of range for shape {a.data.shape}")
    out = a.data[start:start + count]
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)

    def bw(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[start:start + count] += g

    return _node(out, (a,), bw)


def flatten_row(a) -> Tensor:
    """Row-major reshape of (k, n) into (1, k*n); gradient reshapes back."""
    a = as_tensor(a)
    out = np.ascontiguousarray(a.data).reshape(1, -1)
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)
    shape = a.data.shape

    def bw(g):
        _accum(a, g.reshape(shape))

    return _node(out, (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if axis not in (0, 1):
        raise ShapeError(f"concat axis must be 0 or 1; got {axis}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    if not (grad_enabled() and any(t.requires_grad for t in ts)):
        return Tensor(out)
    sizes = [t.data.shape[axis] for t in ts]

    def bw(g):
        off = 0
        for t, s in zip(ts, sizes):
            if t.requires_grad:
                sl = g[off:off + s] if axis == 0 else g[:, off:off + s]
                _accum(t, sl)
            off += s

    return _node(out, tuple(ts), bw)


def selu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = x * SELU_LAMBDA
    neg = x <= 0.0
    has_neg = neg.any()
    if has_neg:
        e = np.exp(x[neg])  # exp only where the negative branch applies
        out[neg] = (SELU_LAMBDA * SELU_ALPHA) * (e - 1.0)
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)
    dtype = x.dtype

    def bw(g):
        dfac = np.full(x.shape, SELU_LAMBDA, dtype=dtype)
        if has_neg:
            dfac[neg] = (SELU_LAMBDA * SELU_ALPHA) * e
        _accum_owned(a, g * dfac)

    return _node(out, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)

    def bw(g):
        _accum_owned(a, g * (out * (1.0 - out)))

    return _node(out, (a,), bw)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)

    def bw(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        _accum_owned(a, out * (g - dot))

    return _node(out, (a,), bw)


def layer_norm(a, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Per-row normalization with learnable scale and shift."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.data
    n = x.shape[1]
    if gamma.data.shape != (1, n) or beta.data.shape != (1, n):
        raise ShapeError(
            f"layer_norm affine shapes must be (1, {n}); got {gamma.data.shape} and {beta.data.shape}")
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    if not (grad_enabled() and (a.requires_grad or gamma.requires_grad or beta.requires_grad)):
        return Tensor(out)

    def bw(g):
        if gamma.requires_grad:
            _accum_owned(gamma, (g * xhat).sum(axis=0, keepdims=True))
        if beta.requires_grad:
            _accum_owned(beta, g.sum(axis=0, keepdims=True))
        if a.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            _accum_owned(a, inv * (dxhat - m1 - xhat * m2))

    return _node(out, (a, gamma, beta), bw)


def mean(a) -> Tensor:
    """Mean over all entries, as a 1x1 tensor."""
    a = as_tensor(a)
    out = np.array([[a.data.mean()]], dtype=a.data.dtype)
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)
    scale = 1.0 / a.data.size

    def bw(g):
        _accum_owned(a, np.full(a.data.shape, g[0, 0] * scale, dtype=a.data.dtype))

    return _node(out, (a,), bw)


def absolute(a) -> Tensor:
    """Elementwise absolute value; subgradient 0 at 0."""
    a = as_tensor(a)
    out = np.abs(a.data)
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)
    sign = np.sign(a.data)

    def bw(g):
        _accum_owned(a, g * sign)

    return _node(out, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)

    def bw(g):
        _accum_owned(a, g / a.data)

    return _node(out, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)

    def bw(g):
        _accum_owned(a, g * out)

    return _node(out, (a,), bw)


def clamp(a, lo: float, hi: float) -> Tensor:
    """Elementwise clip; gradient passes through inside [lo, hi], zero outside."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    if not (grad_enabled() and a.requires_grad):
        return Tensor(out)
    mask = ((a.data >= lo) & (a.data <= hi)).astype(a.data.dtype)

    def bw(g):
        _accum_owned(a, g * mask)

    return _node(out, (a,), bw)


def cosine_rows(u, m) -> Tensor:
    """Cosine similarity of a row vector against each row of a matrix.

    Returns a (1, rows) tensor; the denominator carries a small epsilon so a
    zero vector yields similarity 0 instead of NaN.
    """
    u, m = as_tensor(u), as_tensor(m)
    if u.data.shape[0] != 1:
        raise ShapeError(f"cosine query must be a row vector; got {u.data.shape}")
    if u.data.shape[1] != m.data.shape[1]:
        raise ShapeError(f"cosine dimension mismatch: {u.data.shape} vs {m.data.shape}")
    if u.data.shape[1] < 1:
        raise ShapeError("cosine requires at least one dimension")
    ud = u.data
    md = m.data
    dots = md @ ud.T                                     # (r, 1)
    nu = float(np.sqrt((ud * ud).sum()))
    nm = np.sqrt((md * md).sum(axis=1, keepdims=True))   # (r, 1)
    den = nu * nm + COSINE_EPS
    c = dots / den                                       # (r, 1)
    out = np.ascontiguousarray(c.T)
    if not (grad_enabled() and (u.requires_grad or m.requires_grad)):
        return Tensor(out)

    def bw(g):
        gc = g.T  # (r, 1)
        if u.requires_grad:
            gu = (gc / den).T @ md
            if nu > 0.0:
                coef = float((gc * c * nm / den).sum()) / nu
                gu = gu - coef * ud
            _accum_owned(u, gu)
        if m.requires_grad:
            gm = (gc / den) @ ud
            nm_safe = np.where(nm > 0.0, nm, 1.0)
            coef = np.where(nm > 0.0, gc * c * nu / (den * nm_safe), 0.0)
            gm = gm - coef * md
            _accum_owned(m, gm)

    return _node(out, (u, m), bw)


def cosine_similarity(u, v) -> Tensor:
    """Cosine similarity of two row vectors, as a 1x1 tensor."""
    return cosine_rows(u, v)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

def sgd_step(params, lr: float):
    """Apply w <- w - lr * grad to every parameter, then clear gradients.

    A cleared gradient (``grad is None``) is the zero state; parameters that
    never received gradients are left unchanged, which equals a zero update.
    """
    for p in params:
        if p.grad is not None:
            p.data -= lr * p.grad
            p.grad = None


def zero_grads(params):
    for p in params:
        p.grad = None


class SGD:
    """Plain stochastic gradient descent over materialized gradients."""

    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = float(lr)

    def step(self):
        sgd_step(self.params, self.lr)

    def zero_grad(self):
        zero_grads(self.params)


class FusedSGD:
    """SGD that applies matmul weight updates as in-place BLAS rank updates.

    With one patient per step, weight gradients are outer products; writing
    them out and re-reading them doubles the memory traffic of a step.  This
    optimizer registers itself on fuse-marked weights so the matmul backward
    hands over (input, output-grad) pairs instead of materializing the
    gradient, and ``step`` applies ``W -= lr * x^T g`` directly via ger/gemm.
    The result matches ``sgd_step`` up to floating-point rounding order.
    """

    def __init__(self, params, lr: float):
        from scipy.linalg import blas as _blas

        self.params = list(params)
        self.lr = float(lr)
        self.pending = []
        self._ger = {np.dtype(np.float64): _blas.dger, np.dtype(np.float32): _blas.sger}
        self._gemm = {np.dtype(np.float64): _blas.dgemm, np.dtype(np.float32): _blas.sgemm}
        for p in self.params:
            if getattr(p, "fuse_ok", False):
                if not p.data.flags.f_contiguous:
                    p.data = np.asfortranarray(p.data)
                p._fused = self.pending

    def step(self):
        lr = self.lr
        for p, x, g in self.pending:
            if x.shape[0] == 1:
                self._ger[p.data.dtype](-lr, x.ravel(), g.ravel(), a=p.data, overwrite_a=1)
            else:
                self._gemm[p.data.dtype](-lr, x.T, g, beta=1.0, c=p.data, overwrite_c=1)
        self.pending.clear()
        sgd_step(self.params, lr)

    def zero_grad(self):
        self.pending.clear()
        zero_grads(self.params)

    def detach(self):
        """Unregister from the weights (restores contract-path backward)."""
        for p in self.params:
            if getattr(p, "_fused", None) is self.pending:
                p._fused = None
