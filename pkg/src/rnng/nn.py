"""Neural building blocks: parameter store, LSTMs, stack encoder, composition.

The checkpoint container written by ParamStore.save is binary and versioned:

    magic      8 bytes   b"RNNGCKP1"
    precision  4 bytes   b"f32 " or b"f64 "
    seed       8 bytes   unsigned little-endian
    meta_len   8 bytes   unsigned little-endian
    meta       meta_len bytes of UTF-8 JSON (model metadata; "{}" if none)
    count      8 bytes   number of parameter records
    records    for each parameter, in insertion order:
        name_len  2 bytes unsigned LE, then name_len bytes UTF-8
        ndim      1 byte
        dims      ndim * 8 bytes unsigned LE
        data      raw little-endian array bytes

Data bytes round-trip exactly; loading reproduces identical arrays.
"""

from __future__ import annotations

import json
import math
import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Value

MAGIC = b"RNNGCKP1"
_PRECISIONS = {"f32": np.float32, "f64": np.float64}


def glorot_init(shape, rng) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 2:
        fan_out, fan_in = shape
    else:
        fan_in = fan_out = shape[0]
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


class ParamStore:
    """Named collection of trainable arrays; names are unique."""

    def __init__(self, seed=0, precision="f32"):
        if precision not in _PRECISIONS:
            raise ValueError(f"precision must be one of {sorted(_PRECISIONS)}")
        self.seed = seed
        self.precision = precision
        self.dtype = _PRECISIONS[precision]
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Value] = {}

    def add(self, name, shape, init="glorot") -> Value:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if isinstance(init, np.ndarray):
            data = init.astype(self.dtype)
        elif init == "glorot":
            data = glorot_init(shape, self.rng).astype(self.dtype)
        elif init == "zeros":
            data = np.zeros(shape, dtype=self.dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        v = Value(data)
        self._params[name] = v
        return v

    def __getitem__(self, name) -> Value:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self):
        return list(self._params)

    def snapshot(self) -> dict:
        return {name: v.data.copy() for name, v in self._params.items()}

    def restore(self, snap) -> None:
        for name, arr in snap.items():
            self._params[name].data = arr.copy()

    def save(self, path, meta=None) -> None:
        meta_bytes = json.dumps(meta if meta is not None else {},
                                sort_keys=True).encode("utf-8")
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(self.precision.ljust(4).encode("ascii"))
            f.write(struct.pack("<Q", self.seed))
            f.write(struct.pack("<Q", len(meta_bytes)))
            f.write(meta_bytes)
            f.write(struct.pack("<Q", len(self._params)))
            for name, v in self._params.items():
                nb = name.encode("utf-8")
                f.write(struct.pack("<H", len(nb)))
                f.write(nb)
                arr = v.data
                f.write(struct.pack("<B", arr.ndim))
                for d in arr.shape:
                    f.write(struct.pack("<Q", d))
                f.write(np.ascontiguousarray(arr, dtype="<" + arr.dtype.str[1:]).tobytes())

    @classmethod
    def load(cls, path):
        """Returns (store, meta)."""
        with open(path, "rb") as f:
            if f.read(8) != MAGIC:
                raise ValueError(f"{path}: not a checkpoint file (bad magic)")
            precision = f.read(4).decode("ascii").strip()
            (seed,) = struct.unpack("<Q", f.read(8))
            (meta_len,) = struct.unpack("<Q", f.read(8))
            meta = json.loads(f.read(meta_len).decode("utf-8"))
            (count,) = struct.unpack("<Q", f.read(8))
            store = cls(seed=seed, precision=precision)
            for _ in range(count):
                (name_len,) = struct.unpack("<H", f.read(2))
                name = f.read(name_len).decode("utf-8")
                (ndim,) = struct.unpack("<B", f.read(1))
                shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
                n_items = int(np.prod(shape)) if shape else 1
                raw = f.read(n_items * store.dtype().itemsize)
                arr = np.frombuffer(raw, dtype="<" + np.dtype(store.dtype).str[1:])
                store.add(name, shape, init=arr.reshape(shape).astype(store.dtype))
        return store, meta


def sgd_step(store: ParamStore, lr: float, max_norm: float | None = None) -> None:
    """theta <- theta - lr * adjoint for every parameter, then zero adjoints.

    With `max_norm`, gradients are jointly rescaled when their global L2
    norm exceeds it (off by default).
    """
    scale = 1.0
    if max_norm is not None:
        sq = 0.0
        for v in store.values():
            if v.adjoint is not None:
                sq += float((v.adjoint ** 2).sum())
        norm = math.sqrt(sq)
        if norm > max_norm:
            scale = max_norm / (norm + 1e-12)
    for v in store.values():
        if v.adjoint is not None:
            v.data -= (lr * scale) * v.adjoint
        v.adjoint = None


def dropout(x: Value, rate: float, training: bool, rng=None) -> Value:
    """Inverted dropout: kept units are scaled by 1/(1-rate); a no-op when
    evaluating or when rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    return ad.mul_const(x, keep / (1.0 - rate))


class Lstm:
    """Multi-layer LSTM cell over vector inputs.

    Layer l consumes the hidden state of layer l-1.  Gate order in the
    packed pre-activation is [input; forget; candidate; output]; forget
    biases start at 1.0.
    """

    def __init__(self, store: ParamStore, name: str, input_dim: int,
                 hidden_dim: int, layers: int):
        self.name = name
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.layers = layers
        self.w = []
        self.b = []
        for l in range(layers):
            in_dim = input_dim if l == 0 else hidden_dim
            w = store.add(f"{name}/l{l}/w", (4 * hidden_dim, in_dim + hidden_dim))
            bias = np.zeros(4 * hidden_dim, dtype=store.dtype)
            bias[hidden_dim:2 * hidden_dim] = 1.0
            b = store.add(f"{name}/l{l}/b", (4 * hidden_dim,), init=bias)
            self.w.append(w)
            self.b.append(b)
        zero = np.zeros(hidden_dim, dtype=store.dtype)
        self._zero = Value(zero)

    def initial(self):
        """Per-layer (h, c) start state (zeros)."""
        return tuple((self._zero, self._zero) for _ in range(self.layers))

    def step(self, state, x: Value, training=False, dropout_rate=0.0, rng=None):
        """One update; returns the new per-layer (h, c) tuple."""
        if x.data.shape != (self.input_dim,):
            raise ValueError(
                f"{self.name}: input shape {x.data.shape}, expected ({self.input_dim},)")
        new_state = []
        inp = x
        for l, (h_prev, c_prev) in enumerate(state):
            inp = dropout(inp, dropout_rate, training, rng)
            z = ad.affine(self.w[l], ad.concat([inp, h_prev]), self.b[l])
            h, c = ad.lstm_gates(z, c_prev)
            new_state.append((h, c))
            inp = h
        return tuple(new_state)


class StackRnn:
    """Persistent stack encoder: O(1) push/pop by keeping every past state.

    The summary embedding is the top hidden state of the last layer, or a
    learned constant vector for the empty stack.  Instances are immutable;
    push/pop return new stacks that share structure, so interleaved
    push/pop sequences reuse previously computed states exactly.
    """

    __slots__ = ("lstm", "empty_vec", "node", "depth",
                 "_training", "_dropout", "_rng")

    def __init__(self, lstm: Lstm, empty_vec: Value, node=None, depth=0,
                 training=False, dropout_rate=0.0, rng=None):
        self.lstm = lstm
        self.empty_vec = empty_vec
        self.node = node  # (prev_node, lstm_state, pushed_vec)
        self.depth = depth
        self._training = training
        self._dropout = dropout_rate
        self._rng = rng

    def _make(self, node, depth):
        return StackRnn(self.lstm, self.empty_vec, node, depth,
                        self._training, self._dropout, self._rng)

    def push(self, vec: Value) -> "StackRnn":
        state = self.node[1] if self.node is not None else self.lstm.initial()
        new_state = self.lstm.step(state, vec, self._training, self._dropout, self._rng)
        return self._make((self.node, new_state, vec), self.depth + 1)

    def pop(self):
        """Returns (stack_without_top, the vector that was pushed on top)."""
        if self.node is None:
            raise ValueError("pop from an empty stack")
        prev, _, vec = self.node
        return self._make(prev, self.depth - 1), vec

    def embedding(self) -> Value:
        if self.node is None:
            return self.empty_vec
        return self.node[1][-1][0]

    def __len__(self):
        return self.depth


class StackEncoder:
    """Owns the parameters of one StackRnn family (LSTM + empty embedding)."""

    def __init__(self, store: ParamStore, name: str, input_dim: int,
                 hidden_dim: int, layers: int):
        self.lstm = Lstm(store, name, input_dim, hidden_dim, layers)
        self.empty_vec = store.add(f"{name}/empty", (hidden_dim,))

    def empty(self, training=False, dropout_rate=0.0, rng=None) -> StackRnn:
        return StackRnn(self.lstm, self.empty_vec, None, 0,
                        training, dropout_rate, rng)


class Composer:
    """Bidirectional recurrent reduction of a completed constituent.

    Both directions read the constituent label first, then the child
    vectors (forward order / reverse order); the two final hidden states
    are concatenated and passed through affine + tanh.

    The "buggy" variant reproduces a historical defect kept for ablation:
    the rightmost child is dropped and replaced by a second copy of the
    label, so the forward direction reads [label, c_1 .. c_{k-1}, label]
    (for a single child, just [label, label]).  Its output is therefore
    exactly invariant to the rightmost child.
    """

    VARIANTS = ("correct", "buggy")

    def __init__(self, store: ParamStore, name: str, dim: int):
        self.fwd = Lstm(store, f"{name}/fwd", dim, dim, 1)
        self.bwd = Lstm(store, f"{name}/bwd", dim, dim, 1)
        self.w = store.add(f"{name}/out/w", (dim, 2 * dim))
        self.b = store.add(f"{name}/out/b", (dim,), init="zeros")

    def _run(self, lstm, seq, training, dropout_rate, rng):
        state = lstm.initial()
        for v in seq:
            state = lstm.step(state, v, training, dropout_rate, rng)
        return state[-1][0]

    def compose(self, label_emb: Value, children, variant="correct",
                training=False, dropout_rate=0.0, rng=None) -> Value:
        if not children:
            raise ValueError("compose requires at least one child")
        if variant not in self.VARIANTS:
            raise ValueError(f"unknown composition variant {variant!r}")
        if variant == "buggy":
            children = list(children[:-1]) + [label_emb]
        fwd_in = [label_emb] + list(children)
        bwd_in = [label_emb] + list(reversed(children))
        hf = self._run(self.fwd, fwd_in, training, dropout_rate, rng)
        hb = self._run(self.bwd, bwd_in, training, dropout_rate, rng)
        return ad.tanh(ad.affine(self.w, ad.concat([hf, hb]), self.b))
