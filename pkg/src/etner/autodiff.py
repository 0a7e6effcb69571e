"""Dense tensors with reverse-mode automatic differentiation, plus Adam.

numpy (and scipy.sparse for the one sparse kernel) supply the number
crunching; this module owns the tape.  Every op returns a new :class:`Tensor`
that remembers its parent tensors and a closure mapping the output gradient to
parent gradients.  ``backward`` walks that implicit graph in reverse
topological order and accumulates gradients on every tensor that requires
them.

Convention: float64 for gradient checking and oracles, float32 for training.
Ops never mix the two silently; the output dtype follows numpy promotion of
the inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# When True, every op output is checked for NaN/Inf and a FloatingPointError
# is raised naming the op.  Off by default: the check costs a full pass over
# each output.  Tests and oracle-mode code enable it.
CHECK_FINITE = False


class Tensor:
    """A dense array plus the tape bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, op="leaf", _parents=(), _vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op})"

    # Small operator sugar; everything routes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def parameter(data):
    """A trainable leaf."""
    return Tensor(np.asarray(data), requires_grad=True)


def constant(data):
    return Tensor(np.asarray(data), requires_grad=False)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data, op, parents, vjp):
    out_requires = any(p.requires_grad for p in parents)
    data = np.asarray(data)
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    if not out_requires:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, op=op, _parents=parents, _vjp=vjp)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}") from None


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(a.data + b.data, "add", (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(a.data - b.data, "sub", (a, b), vjp)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(a.data * b.data, "mul", (a, b), vjp)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _make(a.data * c, "scale", (a,), vjp)


def relu(a):
    a = _as_tensor(a)
    # subgradient convention: relu'(0) = 0
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), "relu", (a,), vjp)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul: need >=2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul: shape mismatch {a.data.shape} vs {b.data.shape}")

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return _make(np.matmul(a.data, b.data), "matmul", (a, b), vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _make(a.data.reshape(shape), "reshape", (a,), vjp)


def permute(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), "permute", (a,), vjp)


def concat(parts, axis=-1):
    """Concatenation along the last axis."""
    parts = [_as_tensor(p) for p in parts]
    if axis != -1:
        raise ValueError("concat: only the last axis is supported")
    lead = {p.data.shape[:-1] for p in parts}
    if len(lead) != 1:
        raise ValueError(f"concat: shape mismatch {[p.data.shape for p in parts]}")
    widths = [p.data.shape[-1] for p in parts]
    cuts = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=-1))

    return _make(np.concatenate([p.data for p in parts], axis=-1), "concat", tuple(parts), vjp)


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    shape = a.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), vjp)


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[i] for i in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# normalizing / probabilistic ops (last axis)


def softmax(a):
    a = _as_tensor(a)
    x = a.data
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _make(y, "softmax", (a,), vjp)


def logsumexp(a):
    """log(sum(exp(x))) over the last axis; output drops that axis."""
    a = _as_tensor(a)
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    out = np.log(np.exp(x - m).sum(axis=-1, keepdims=True)) + m
    soft = np.exp(x - out)
    out = out.squeeze(-1)

    def vjp(g):
        return (soft * g[..., None],)

    return _make(out, "logsumexp", (a,), vjp)


LAYER_NORM_EPS = 1e-5


def layer_norm(a, gain, bias, eps=LAYER_NORM_EPS):
    """Normalize the last axis to mean 0 / variance 1, then apply gain and bias."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(
            f"layer_norm: shape mismatch input {a.data.shape} vs gain {gain.data.shape} / bias {bias.data.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return _make(xhat * gain.data + bias.data, "layer_norm", (a, gain, bias), vjp)


def dropout(a, rate, rng, train):
    """Inverted dropout; the identity when not training or rate == 0."""
    a = _as_tensor(a)
    if not train or rate == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= rate).astype(a.data.dtype) / (1.0 - rate)

    def vjp(g):
        return (g * keep,)

    return _make(a.data * keep, "dropout", (a,), vjp)


# ---------------------------------------------------------------------------
# gather / scatter ops


def gather_rows(table, idx):
    """Row lookup: out[..., :] = table[idx[...], :].  Gradient scatter-adds."""
    table = _as_tensor(table)
    idx = np.asarray(idx)
    if table.data.ndim != 2:
        raise ValueError(f"gather_rows: table must be 2-D, got {table.data.shape}")

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _make(table.data[idx], "gather_rows", (table,), vjp)


def take(a, flat_idx):
    """Elementwise lookup into the flattened input: out[...] = a.ravel()[flat_idx[...]]."""
    a = _as_tensor(a)
    flat_idx = np.asarray(flat_idx)
    shape = a.data.shape

    def vjp(g):
        ga = np.zeros(a.data.size, dtype=a.data.dtype)
        np.add.at(ga, flat_idx.ravel(), g.ravel())
        return (ga.reshape(shape),)

    return _make(a.data.reshape(-1)[flat_idx], "take", (a,), vjp)


def sparse_matmul(sp_csr, w):
    """CSR-constant times dense parameter: out = sp_csr @ w.

    The sparse side is fixed input data (token feature rows), so only the
    dense weight receives a gradient: gw = sp_csr.T @ g.
    """
    w = _as_tensor(w)
    out = sp_csr @ w.data

    def vjp(g):
        return ((sp_csr.T @ g).astype(w.data.dtype),)

    return _make(out, "sparse_matmul", (w,), vjp)


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
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


def backward(loss, trainables=None):
    """Reverse-mode accumulation from a scalar loss node.

    Gradients land on ``.grad`` of every tensor with requires_grad.  When
    ``trainables`` is given, any listed tensor the loss never touched gets an
    explicit zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None:
            continue
        grads = node._vjp(node.grad)
        for p, g in zip(node._parents, grads):
            if not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            p.grad += g
    if trainables is not None:
        for t in trainables:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(loss_fn, wrt, h=1e-5):
    """Max relative error between backward() and central differences.

    ``loss_fn`` must rebuild and return the scalar loss from scratch on every
    call (it reads ``wrt.data``, which is perturbed in place and restored), and
    must be deterministic across calls.  Double precision only: float32 noise
    swamps an h of 1e-5.
    """
    if wrt.data.dtype != np.float64:
        raise ValueError("finite_diff_check: double precision required")
    zero_grads([wrt])
    loss = loss_fn()
    backward(loss)
    analytic = wrt.grad.copy()

    max_rel = 0.0
    it = np.nditer(wrt.data, flags=["multi_index"])
    while not it.finished:
        ix = it.multi_index
        orig = wrt.data[ix]
        wrt.data[ix] = orig + h
        f_plus = float(loss_fn().data)
        wrt.data[ix] = orig - h
        f_minus = float(loss_fn().data)
        wrt.data[ix] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        a = analytic[ix]
        rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        max_rel = max(max_rel, rel)
        it.iternext()
    return max_rel


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the step counter."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads, state):
    """One Adam update over named parameters, in place.

    Bias-corrected moments; the epsilon sits under the square root
    (denominator sqrt(v_hat + eps)), which is what the worked values in the
    test suite pin down.
    """
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= (state.lr * m_hat / np.sqrt(v_hat + state.eps)).astype(p.data.dtype)
    return params, state
