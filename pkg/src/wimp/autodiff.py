"""Tape-based reverse-mode differentiation over float64 numpy arrays,
with the primitive set needed by the forecasting network (including a
fused LSTM cell), a named parameter store, and Adam with global-norm
gradient clipping."""

from __future__ import annotations

import struct

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


class Var:
    """A tape node: forward value plus a lazily-allocated gradient slot."""

    __slots__ = ("value", "grad", "_backward", "requires_grad")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._backward = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


class Tape:
    """Records operations in execution order; backward replays them reversed."""

    def __init__(self):
        self.nodes: list[Var] = []

    def record(self, out: Var, backward) -> Var:
        out._backward = backward
        out.requires_grad = True
        self.nodes.append(out)
        return out

    def var(self, value, requires_grad=True) -> Var:
        v = Var(value, requires_grad=requires_grad)
        if requires_grad:
            self.nodes.append(v)
        return v

    def constant(self, value) -> Var:
        return Var(value, requires_grad=False)

    def backward(self, loss: Var) -> None:
        if loss.value.shape != ():
            raise NonScalarLoss(f"loss has shape {loss.value.shape}")
        loss.grad = np.array(1.0)
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value + b.value)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return tape.record(out, backward)


def sub(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value - b.value)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(-_unbroadcast(g, b.shape))

    return tape.record(out, backward)


def mul(tape: Tape, a: Var, b: Var) -> Var:
    out = Var(a.value * b.value)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.value, b.shape))

    return tape.record(out, backward)


def scale(tape: Tape, a: Var, k: float) -> Var:
    out = Var(a.value * k)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * k)

    return tape.record(out, backward)


def matmul(tape: Tape, a: Var, b: Var) -> Var:
    if a.value.ndim == 0 or b.value.ndim == 0:
        raise ShapeMismatch("matmul needs arrays, got scalars")
    if a.value.shape[-1] != b.value.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out = Var(a.value @ b.value)

    def backward(g):
        if a.requires_grad:
            if b.value.ndim == 1:
                a.accumulate(np.outer(g, b.value) if a.value.ndim == 2 else g * b.value)
            else:
                a.accumulate(g @ b.value.T)
        if b.requires_grad:
            if a.value.ndim == 1:
                b.accumulate(np.outer(a.value, g) if b.value.ndim == 2 else g * a.value)
            else:
                b.accumulate(a.value.T @ g)

    return tape.record(out, backward)


def dot(tape: Tape, a: Var, b: Var) -> Var:
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"dot {a.shape} vs {b.shape}")
    out = Var(np.dot(a.value.ravel(), b.value.ravel()))

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.value)
        if b.requires_grad:
            b.accumulate(g * a.value)

    return tape.record(out, backward)


def concat(tape: Tape, vars_: list[Var], axis: int = 0) -> Var:
    out = Var(np.concatenate([v.value for v in vars_], axis=axis))
    sizes = [v.value.shape[axis] for v in vars_]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        parts = np.split(g, splits, axis=axis)
        for v, p in zip(vars_, parts):
            if v.requires_grad:
                v.accumulate(p)

    return tape.record(out, backward)


def split(tape: Tape, a: Var, sizes: list[int], axis: int = 0) -> list[Var]:
    if sum(sizes) != a.value.shape[axis]:
        raise ShapeMismatch(f"split sizes {sizes} do not cover axis of {a.shape}")
    splits = np.cumsum(sizes)[:-1]
    parts = np.split(a.value, splits, axis=axis)
    outs = [Var(p) for p in parts]

    def make_backward(i):
        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.value)
                idx = [slice(None)] * a.value.ndim
                start = int(np.concatenate(([0], splits))[i])
                idx[axis] = slice(start, start + sizes[i])
                full[tuple(idx)] = g
                a.accumulate(full)

        return backward

    return [tape.record(o, make_backward(i)) for i, o in enumerate(outs)]


def take(tape: Tape, a: Var, index) -> Var:
    """Differentiable indexing / slicing."""
    out = Var(a.value[index])

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.value)
            full[index] = g
            a.accumulate(full)

    return tape.record(out, backward)


def tanh(tape: Tape, a: Var) -> Var:
    y = np.tanh(a.value)
    out = Var(y)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - y * y))

    return tape.record(out, backward)


def sigmoid(tape: Tape, a: Var) -> Var:
    y = 1.0 / (1.0 + np.exp(-a.value))
    out = Var(y)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * y * (1.0 - y))

    return tape.record(out, backward)


def elu(tape: Tape, a: Var, alpha: float = 1.0) -> Var:
    neg = a.value < 0
    y = np.where(neg, alpha * (np.exp(np.minimum(a.value, 0.0)) - 1.0), a.value)
    out = Var(y)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * np.where(neg, y + alpha, 1.0))

    return tape.record(out, backward)


def softmax(tape: Tape, a: Var, axis: int = -1) -> Var:
    z = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = Var(y)

    def backward(g):
        if a.requires_grad:
            gy = g * y
            a.accumulate(gy - y * np.sum(gy, axis=axis, keepdims=True))

    return tape.record(out, backward)


def sum_(tape: Tape, a: Var) -> Var:
    out = Var(np.sum(a.value))

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.value, float(g)))

    return tape.record(out, backward)


def mean(tape: Tape, a: Var) -> Var:
    n = a.value.size
    out = Var(np.sum(a.value) / n)

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.value, float(g) / n))

    return tape.record(out, backward)


def l1_distance(tape: Tape, a: Var, b: Var) -> Var:
    """Sum of absolute coordinate differences; subgradient sign(a-b), 0 at ties."""
    if a.value.shape != b.value.shape:
        raise ShapeMismatch(f"l1_distance {a.shape} vs {b.shape}")
    diff = a.value - b.value
    out = Var(np.sum(np.abs(diff)))
    s = np.sign(diff)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * s)
        if b.requires_grad:
            b.accumulate(-g * s)

    return tape.record(out, backward)


def dropout(tape: Tape, a: Var, rate: float, rng: np.random.Generator | None) -> Var:
    """Inverted dropout with an explicitly seeded generator; rate 0 or a
    missing generator (eval mode) is the identity."""
    if rate == 0.0 or rng is None:
        return a
    mask = (rng.random(a.value.shape) >= rate) / (1.0 - rate)
    out = Var(a.value * mask)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return tape.record(out, backward)


def lstm_cell(tape: Tape, x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var):
    """Fused LSTM cell. Gate layout along the 4H axis is [i, f, g, o].

    x: (I,), h/c: (H,), w_ih: (4H, I), w_hh: (4H, H), b: (4H,).
    Returns (h', c').
    """
    hidden = h.value.shape[0]
    if w_ih.value.shape != (4 * hidden, x.value.shape[0]) or w_hh.value.shape != (4 * hidden, hidden):
        raise ShapeMismatch(
            f"lstm_cell weights {w_ih.shape}/{w_hh.shape} vs x {x.shape}, h {h.shape}"
        )
    z = w_ih.value @ x.value + w_hh.value @ h.value + b.value
    zi, zf, zg, zo = np.split(z, 4)
    i = 1.0 / (1.0 + np.exp(-zi))
    f = 1.0 / (1.0 + np.exp(-zf))
    g_ = np.tanh(zg)
    o = 1.0 / (1.0 + np.exp(-zo))
    c_new = f * c.value + i * g_
    tc = np.tanh(c_new)
    h_new = o * tc

    out_h = Var(h_new)
    out_c = Var(c_new)
    grads_seen = {"h": None, "c": None}

    def run_backward():
        dh = grads_seen["h"] if grads_seen["h"] is not None else 0.0
        dc_in = grads_seen["c"] if grads_seen["c"] is not None else 0.0
        dc = dc_in + dh * o * (1.0 - tc * tc)
        dzo = (dh * tc) * o * (1.0 - o)
        dzi = (dc * g_) * i * (1.0 - i)
        dzf = (dc * c.value) * f * (1.0 - f)
        dzg = (dc * i) * (1.0 - g_ * g_)
        dz = np.concatenate([dzi, dzf, dzg, dzo])
        if x.requires_grad:
            x.accumulate(w_ih.value.T @ dz)
        if h.requires_grad:
            h.accumulate(w_hh.value.T @ dz)
        if c.requires_grad:
            c.accumulate(dc * f)
        if w_ih.requires_grad:
            w_ih.accumulate(np.outer(dz, x.value))
        if w_hh.requires_grad:
            w_hh.accumulate(np.outer(dz, h.value))
        if b.requires_grad:
            b.accumulate(dz)

    # The two outputs share one fused adjoint. out_c is recorded after out_h,
    # so the reverse sweep visits out_c first; by then out_h.grad is final
    # (nothing between them can contribute to it). Run the fused adjoint at
    # out_h when it carries gradient, otherwise at out_c.
    def backward_h(g):
        grads_seen["h"] = g
        run_backward()

    def backward_c(g):
        grads_seen["c"] = g
        if out_h.grad is None:
            run_backward()

    tape.record(out_h, backward_h)
    tape.record(out_c, backward_c)
    return out_h, out_c


class ParameterStore:
    """Named float64 parameters with Adam moment accumulators."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count: int = 0

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        arr = np.asarray(value, dtype=np.float64)
        self.params[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)

    def names(self) -> list[str]:
        return list(self.params.keys())

    def watch(self, tape: Tape) -> dict[str, Var]:
        """Leaf Vars for every parameter; grads land on these after backward."""
        return {name: tape.var(value) for name, value in self.params.items()}

    def gradients(self, watched: dict[str, Var]) -> dict[str, np.ndarray]:
        return {
            name: (var.grad if var.grad is not None else np.zeros_like(var.value))
            for name, var in watched.items()
        }

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for name, value in self.params.items():
            other.params[name] = value.copy()
            other.m[name] = self.m[name].copy()
            other.v[name] = self.v[name].copy()
        other.step_count = self.step_count
        return other


def clip_global_norm(grads: dict[str, np.ndarray], clip_norm: float) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= clip_norm or total == 0.0:
        return grads
    factor = clip_norm / total
    return {name: g * factor for name, g in grads.items()}


def adam_step(
    store: ParameterStore,
    grads: dict[str, np.ndarray],
    lr: float,
    clip_norm: float | None = 1.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """In-place Adam update after optional global-norm clipping."""
    if clip_norm is not None:
        grads = clip_global_norm(grads, clip_norm)
    store.step_count += 1
    t = store.step_count
    for name, g in grads.items():
        if g.shape != store.params[name].shape:
            raise ShapeMismatch(f"gradient for {name}: {g.shape} vs {store.params[name].shape}")
        store.m[name] = beta1 * store.m[name] + (1 - beta1) * g
        store.v[name] = beta2 * store.v[name] + (1 - beta2) * g * g
        m_hat = store.m[name] / (1 - beta1**t)
        v_hat = store.v[name] / (1 - beta2**t)
        store.params[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)


CHECKPOINT_MAGIC = b"WIMPCKPT"
CHECKPOINT_VERSION = 1


def _write_record(f, name: str, arr: np.ndarray) -> None:
    encoded = name.encode("utf-8")
    f.write(struct.pack("<I", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        f.write(struct.pack("<Q", dim))
    f.write(arr.astype("<f8").tobytes())


def _read_record(f):
    raw = f.read(4)
    if not raw:
        return None
    (name_len,) = struct.unpack("<I", raw)
    name = f.read(name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", f.read(4))
    shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(f.read(count * 8), dtype="<f8").reshape(shape).copy()
    return name, arr


def save_checkpoint(store: ParameterStore, path, extra: dict | None = None) -> None:
    """Binary checkpoint: magic, version, parameter records, then optimizer
    state records (moments and step counter) in the same layout."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        n_extra = len(extra or {})
        f.write(struct.pack("<I", len(store.params)))
        f.write(struct.pack("<I", n_extra))
        for name, arr in store.params.items():
            _write_record(f, name, arr)
        for name, arr in (extra or {}).items():
            _write_record(f, name, np.asarray(arr, dtype=np.float64))
        for name in store.params:
            _write_record(f, "adam.m/" + name, store.m[name])
        for name in store.params:
            _write_record(f, "adam.v/" + name, store.v[name])
        _write_record(f, "adam.step", np.array(float(store.step_count)))


def load_checkpoint(path) -> tuple[ParameterStore, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (n_params,) = struct.unpack("<I", f.read(4))
        (n_extra,) = struct.unpack("<I", f.read(4))
        store = ParameterStore()
        for _ in range(n_params):
            name, arr = _read_record(f)
            store.add(name, arr)
        extra = {}
        for _ in range(n_extra):
            name, arr = _read_record(f)
            extra[name] = arr
        while True:
            rec = _read_record(f)
            if rec is None:
                break
            name, arr = rec
            if name.startswith("adam.m/"):
                store.m[name[len("adam.m/"):]] = arr
            elif name.startswith("adam.v/"):
                store.v[name[len("adam.v/"):]] = arr
            elif name == "adam.step":
                store.step_count = int(arr)
    return store, extra
