"""Reverse-mode automatic differentiation over dense numpy tensors.

A ``Graph`` is a flat tape: every primitive appends one node, and the
backward pass walks the tape in reverse append order, so topological
order never has to be recomputed. All trainable layers in the package
are built from the primitives here.

Conventions:
  - data is stored row-major as numpy arrays of the active dtype
    (float64 by default, float32 selectable via ``set_default_dtype``);
  - any NaN/Inf produced by a forward or backward computation raises
    ``NumericError`` immediately, naming the offending op;
  - gradients from multiple consumers of a tensor accumulate by sum.
"""

from __future__ import annotations

import base64
import json
import threading

import numpy as np

from .errors import ContractError, NumericError, ShapeError

_state = threading.local()

_DTYPE = np.float64


def set_default_dtype(name: str) -> None:
    """Select "float64" (default) or "float32" storage for new tensors."""
    global _DTYPE
    if name not in ("float32", "float64"):
        raise ContractError(f"unsupported dtype {name!r}")
    _DTYPE = np.float32 if name == "float32" else np.float64


def default_dtype():
    return _DTYPE


def _graph_stack():
    if not hasattr(_state, "graphs"):
        _state.graphs = []
    return _state.graphs


def _active_graph():
    stack = _graph_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense n-dimensional array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data, dtype=_DTYPE)
        _check_finite(arr, "tensor-init")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g, op_name):
        if g.shape != self.data.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match tensor shape "
                f"{self.data.shape} in backward of {op_name}"
            )
        _check_finite(g, f"{op_name} (backward)")
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


class Graph:
    """Append-only operation tape; context manager activates recording."""

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _graph_stack().pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def _record(self, out, backward_fn):
        self._nodes.append((out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every requires_grad tensor reachable from loss."""
        if loss.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        loss.grad = np.ones_like(loss.data)
        for out, backward_fn in reversed(self._nodes):
            if out.grad is None:
                continue
            backward_fn(out.grad)


def backward(loss: Tensor) -> None:
    """Run the active graph's backward pass from a scalar loss."""
    graph = _active_graph()
    if graph is None:
        raise ContractError("backward called with no active Graph")
    graph.backward(loss)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DTYPE))


def _check_finite(arr, op_name):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {op_name}")


def _make(op_name, data, inputs, backward_fn):
    """Register an op result: finite check, grad flag, tape append."""
    _check_finite(data, op_name)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    graph = _active_graph()
    out.requires_grad = graph is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        graph._record(out, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape), "add")
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape), "add")

    return _make("add", data, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), "mul")
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), "mul")

    return _make("mul", data, (a, b), bwd)


def scale(a, c: float):
    a = _as_tensor(a)
    c = float(c)
    data = a.data * c

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * c, "scale")

    return _make("scale", data, (a,), bwd)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul requires >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not conformant")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape), "matmul")
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape), "matmul")

    return _make("matmul", data, (a, b), bwd)


def tanh(a):
    a = _as_tensor(a)
    data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - data * data), "tanh")

    return _make("tanh", data, (a,), bwd)


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data), "sigmoid")

    return _make("sigmoid", data, (a,), bwd)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            inner = (g * data).sum(axis=axis, keepdims=True)
            a._accumulate(data * (g - inner), "softmax")

    return _make("softmax", data, (a,), bwd)


def logsumexp(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    ex = np.exp(a.data - m)
    s = ex.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    weights = ex / s
    data = out if keepdims else np.squeeze(out, axis=axis) if axis is not None else out.reshape(())

    def bwd(g):
        if a.requires_grad:
            gk = g if keepdims or axis is None else np.expand_dims(g, axis=axis)
            a._accumulate(gk * weights, "log-sum-exp")

    return _make("log-sum-exp", data, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty tensor list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(
            "concat: shapes " + ", ".join(str(t.shape) for t in tensors) + " do not align"
        )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(np.ascontiguousarray(g[tuple(idx)]), "concat")

    return _make("concat", data, tensors, bwd)


def rows(a, indices):
    """Row selection along axis 0; duplicate indices accumulate gradient."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ContractError("rows expects a 1-d index sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ContractError(
            f"row index out of range: valid 0..{a.shape[0] - 1}, "
            f"got min {idx.min()} max {idx.max()}"
        )
    data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            a._accumulate(ga, "row-select")

    return _make("row-select", data, (a,), bwd)


def cols(a, start, stop):
    """Contiguous column slice of a 2-d tensor."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"cols expects a 2-d tensor, got shape {a.shape}")
    data = np.ascontiguousarray(a.data[:, start:stop])

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[:, start:stop] = g
            a._accumulate(ga, "col-slice")

    return _make("col-slice", data, (a,), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}")
    old_shape = a.shape

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(old_shape), "reshape")

    return _make("reshape", data, (a,), bwd)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if axis is None and not keepdims:
        data = np.asarray(data)

    def bwd(g):
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis=axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy(), "sum")

    return _make("sum", data, (a,), bwd)


def dropout(a, mask, keep_prob):
    """Inverted dropout: a * mask / keep_prob. mask=None is the identity
    (inference mode)."""
    a = _as_tensor(a)
    if mask is None:
        return a
    if not 0.0 < keep_prob <= 1.0:
        raise ContractError(f"keep_prob must be in (0, 1], got {keep_prob}")
    m = np.asarray(mask, dtype=a.data.dtype)
    if m.shape != a.data.shape:
        raise ShapeError(f"dropout mask shape {m.shape} != input shape {a.shape}")
    factor = m / keep_prob
    data = a.data * factor

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * factor, "dropout")

    return _make("dropout", data, (a,), bwd)


# ---------------------------------------------------------------------------
# optimizer


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction, in place on param/m/v.

    t is the 1-based step count *after* this update.
    """
    if grad.shape != param.shape or m.shape != param.shape or v.shape != param.shape:
        raise ContractError(
            f"adam_step: param {param.shape}, grad {grad.shape}, "
            f"m {m.shape}, v {v.shape} must all match"
        )
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over a list of named parameter tensors."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8,
                 clip_norm=None):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        if self.clip_norm is not None:
            total = 0.0
            for p in self.params:
                if p.grad is not None:
                    total += float((p.grad * p.grad).sum())
            norm = np.sqrt(total)
            if norm > self.clip_norm:
                ratio = self.clip_norm / norm
                for p in self.params:
                    if p.grad is not None:
                        p.grad *= ratio
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            adam_step(p.data, p.grad, m, v, self.t, self.lr,
                      self.beta1, self.beta2, self.eps)
            _check_finite(p.data, "adam_step")

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# parameter archive

ARCHIVE_FORMAT = "tagex-params-v1"


def save_arrays(named_arrays, meta=None):
    """Serialize named float arrays + metadata to byte-stable JSON bytes."""
    payload = {"format": ARCHIVE_FORMAT, "meta": meta or {}, "arrays": {}}
    for name in sorted(named_arrays):
        arr = np.ascontiguousarray(named_arrays[name], dtype=np.float64)
        payload["arrays"][name] = {
            "shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("ascii")


def load_arrays(blob):
    """Inverse of save_arrays; returns (named_arrays, meta)."""
    payload = json.loads(blob)
    if payload.get("format") != ARCHIVE_FORMAT:
        raise ContractError(
            f"unsupported parameter archive format {payload.get('format')!r}"
        )
    arrays = {}
    for name, entry in payload["arrays"].items():
        raw = base64.b64decode(entry["data"])
        arrays[name] = np.frombuffer(raw, dtype=np.float64).reshape(entry["shape"]).copy()
    return arrays, payload["meta"]
