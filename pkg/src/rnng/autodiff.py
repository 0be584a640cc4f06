"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

A Value wraps an ndarray, a lazily allocated adjoint of the same shape, and
tape back-references.  Operations build the tape as they run; `backward`
propagates adjoints once, in reverse topological order.  Inside `no_grad()`
operations compute data only, which is what sampling and evaluation use.

Only the operations the models need are provided; there is no broadcasting
beyond what the individual ops document.
"""

from __future__ import annotations

import contextlib

import numpy as np


class Value:
    """A node on the tape: data, adjoint slot, and parent back-references."""

    __slots__ = ("data", "adjoint", "parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = data
        self.adjoint = None
        self.parents = parents
        self._backward = backward

    def __repr__(self):
        return f"Value(shape={np.shape(self.data)})"


_grad_enabled = True

# Multiply-accumulate row counter for matrix-vector products; tests use it
# to measure the cost of the class-factored softmax.
stats = {"matvec_rows": 0}


def grad_enabled() -> bool:
    return _grad_enabled


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def constant(data, dtype=None) -> Value:
    arr = np.asarray(data, dtype=dtype)
    return Value(arr)


def _node(data, parents, backward) -> Value:
    if _grad_enabled:
        return Value(data, parents, backward)
    return Value(data)


def _acc(value: Value, grad) -> None:
    if value.adjoint is None:
        value.adjoint = np.zeros_like(value.data)
    value.adjoint += grad


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Value, b: Value) -> Value:
    _check_same_shape(a, b, "add")
    out = _node(a.data + b.data, (a, b), None)
    if _grad_enabled:
        def backward_fn(dy):
            _acc(a, dy)
            _acc(b, dy)
        out._backward = backward_fn
    return out


def mul(a: Value, b: Value) -> Value:
    _check_same_shape(a, b, "mul")
    out = _node(a.data * b.data, (a, b), None)
    if _grad_enabled:
        def backward_fn(dy):
            _acc(a, dy * b.data)
            _acc(b, dy * a.data)
        out._backward = backward_fn
    return out


def mul_const(a: Value, arr) -> Value:
    """Elementwise product with a constant array (no gradient for `arr`)."""
    out = _node(a.data * arr, (a,), None)
    if _grad_enabled:
        def backward_fn(dy):
            _acc(a, dy * arr)
        out._backward = backward_fn
    return out


def scale(a: Value, s: float) -> Value:
    out = _node(a.data * s, (a,), None)
    if _grad_enabled:
        def backward_fn(dy):
            _acc(a, dy * s)
        out._backward = backward_fn
    return out


def neg(a: Value) -> Value:
    return scale(a, -1.0)


def tanh(x: Value) -> Value:
    t = np.tanh(x.data)
    out = _node(t, (x,), None)
    if _grad_enabled:
        def backward_fn(dy):
            _acc(x, dy * (1.0 - t * t))
        out._backward = backward_fn
    return out


def sigmoid(x: Value) -> Value:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = _node(s, (x,), None)
    if _grad_enabled:
        def backward_fn(dy):
            _acc(x, dy * s * (1.0 - s))
        out._backward = backward_fn
    return out


def affine(w: Value, x: Value, b: Value | None = None) -> Value:
    """w @ x (+ b) for a matrix w and vector x."""
    if w.data.ndim != 2 or x.data.ndim != 1 or w.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"affine: shapes {w.data.shape} and {x.data.shape} do not agree")
    if b is not None and b.data.shape != (w.data.shape[0],):
        raise ValueError(f"affine: bias shape {b.data.shape} does not match {w.data.shape}")
    stats["matvec_rows"] += w.data.shape[0]
    y = w.data @ x.data
    if b is not None:
        y = y + b.data
    parents = (w, x) if b is None else (w, x, b)
    out = _node(y, parents, None)
    if _grad_enabled:
        def backward_fn(dy):
            _acc(w, np.outer(dy, x.data))
            _acc(x, w.data.T @ dy)
            if b is not None:
                _acc(b, dy)
        out._backward = backward_fn
    return out


def rows_affine(w: Value, b: Value, rows, x: Value) -> Value:
    """w[rows] @ x + b[rows] for distinct row indices `rows`."""
    rows = np.asarray(rows)
    stats["matvec_rows"] += len(rows)
    sub = w.data[rows]
    y = sub @ x.data + b.data[rows]
    out = _node(y, (w, b, x), None)
    if _grad_enabled:
        def backward_fn(dy):
            if w.adjoint is None:
                w.adjoint = np.zeros_like(w.data)
            w.adjoint[rows] += np.outer(dy, x.data)
            if b.adjoint is None:
                b.adjoint = np.zeros_like(b.data)
            b.adjoint[rows] += dy
            _acc(x, sub.T @ dy)
        out._backward = backward_fn
    return out


def row(m: Value, i: int) -> Value:
    """Row i of a matrix, as a vector (embedding lookup)."""
    out = _node(m.data[i].copy(), (m,), None)
    if _grad_enabled:
        def backward_fn(dy):
            if m.adjoint is None:
                m.adjoint = np.zeros_like(m.data)
            m.adjoint[i] += dy
        out._backward = backward_fn
    return out


def concat(xs) -> Value:
    xs = list(xs)
    sizes = [x.data.shape[0] for x in xs]
    out = _node(np.concatenate([x.data for x in xs]), tuple(xs), None)
    if _grad_enabled:
        def backward_fn(dy):
            off = 0
            for x, size in zip(xs, sizes):
                _acc(x, dy[off:off + size])
                off += size
        out._backward = backward_fn
    return out


def pick(x: Value, i: int) -> Value:
    """Entry i of a vector, as a scalar."""
    out = _node(np.asarray(x.data[i]), (x,), None)
    if _grad_enabled:
        def backward_fn(dy):
            if x.adjoint is None:
                x.adjoint = np.zeros_like(x.data)
            x.adjoint[i] += dy
        out._backward = backward_fn
    return out


def vsum(xs) -> Value:
    """Sum of scalar Values, as a scalar."""
    xs = list(xs)
    total = np.asarray(sum(float(x.data) for x in xs), dtype=xs[0].data.dtype)
    out = _node(total, tuple(xs), None)
    if _grad_enabled:
        def backward_fn(dy):
            for x in xs:
                _acc(x, dy)
        out._backward = backward_fn
    return out


def log_softmax(scores: Value, mask=None) -> Value:
    """Log-probabilities over unmasked entries; masked entries get -inf.

    `mask` is a boolean array (True = allowed).  Masked entries receive zero
    gradient.  A fully masked input is an error.
    """
    s = scores.data
    if mask is None:
        mask = np.ones(s.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != s.shape:
            raise ValueError(f"log_softmax: mask shape {mask.shape} vs scores {s.shape}")
    if not mask.any():
        raise ValueError("log_softmax: all entries are masked")
    sm = s[mask]
    m = sm.max()
    lse = m + np.log(np.exp(sm - m).sum())
    out_data = np.full_like(s, -np.inf)
    out_data[mask] = sm - lse
    out = _node(out_data, (scores,), None)
    if _grad_enabled:
        def backward_fn(dy):
            dym = dy[mask]
            p = np.exp(out_data[mask])
            ds = np.zeros_like(s)
            ds[mask] = dym - p * dym.sum()
            _acc(scores, ds)
        out._backward = backward_fn
    return out


def lstm_gates(z: Value, c_prev: Value):
    """One LSTM cell update from pre-activations z = [i; f; g; o] gates.

    Returns (h, c).  Both outputs backpropagate into z and c_prev
    independently; shared parents accumulate additively.
    """
    hdim = c_prev.data.shape[0]
    if z.data.shape != (4 * hdim,):
        raise ValueError(f"lstm_gates: z shape {z.data.shape} does not match 4*{hdim}")
    zd = z.data
    i = 1.0 / (1.0 + np.exp(-zd[:hdim]))
    f = 1.0 / (1.0 + np.exp(-zd[hdim:2 * hdim]))
    g = np.tanh(zd[2 * hdim:3 * hdim])
    o = 1.0 / (1.0 + np.exp(-zd[3 * hdim:]))
    c_new = f * c_prev.data + i * g
    tc = np.tanh(c_new)
    h_data = o * tc

    h = _node(h_data, (z, c_prev), None)
    c = _node(c_new, (z, c_prev), None)
    if _grad_enabled:
        def gate_backward(dc, do):
            dz = np.empty_like(zd)
            dz[:hdim] = dc * g * i * (1.0 - i)
            dz[hdim:2 * hdim] = dc * c_prev.data * f * (1.0 - f)
            dz[2 * hdim:3 * hdim] = dc * i * (1.0 - g * g)
            dz[3 * hdim:] = do * o * (1.0 - o)
            _acc(z, dz)
            _acc(c_prev, dc * f)

        def backward_h(dh):
            gate_backward(dh * o * (1.0 - tc * tc), dh * tc)

        def backward_c(dcout):
            gate_backward(dcout, np.zeros(hdim, dtype=zd.dtype))

        h._backward = backward_h
        c._backward = backward_c
    return h, c


def backward(loss: Value) -> None:
    """Reverse-propagate from a scalar loss; call once per tape."""
    if np.shape(loss.data) != ():
        raise ValueError("backward expects a scalar loss")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.adjoint = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.adjoint is not None:
            node._backward(node.adjoint)


def zero_adjoints(values) -> None:
    for v in values:
        v.adjoint = None


def grad_check(f, params: dict, eps: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be a pure function of the parameter data (re-evaluated many
    times).  The relative error of a coordinate is
    |analytic - numeric| / max(|analytic| + |numeric|, 1e-3).
    """
    loss = f()
    backward(loss)
    analytic = {}
    for name, v in params.items():
        analytic[name] = (v.adjoint.copy() if v.adjoint is not None
                          else np.zeros_like(v.data))
        v.adjoint = None
    worst = 0.0
    for name, v in params.items():
        flat = v.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            err = abs(aflat[i] - numeric) / max(abs(aflat[i]) + abs(numeric), 1e-3)
            worst = max(worst, err)
    return worst
