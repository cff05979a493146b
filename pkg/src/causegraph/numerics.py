"""Dense float64 tensors with a reverse-mode gradient tape.

Everything is a 2-D row-major array: vectors are (1, d) rows, scalars are
(1, 1). The primitive set is deliberately closed and small; each primitive
records a backward closure on the active tape. Training and verification run
in 64-bit so central finite differences are meaningful.
"""

from __future__ import annotations

import io
import itertools
import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible; message carries both."""


class NonScalarLoss(ValueError):
    """backward() requires a (1, 1) loss tensor."""


class CheckpointError(ValueError):
    """Malformed checkpoint payload."""


_ids = itertools.count()
_F64 = np.dtype(np.float64)


class Tensor:
    """A float64 matrix, optionally marked as a trainable parameter."""

    __slots__ = ("data", "param", "name", "tid")

    def __init__(self, data, param: bool = False, name: str | None = None):
        if type(data) is np.ndarray and data.dtype == _F64 and data.ndim == 2:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float64)
            if arr.ndim == 0:
                arr = arr.reshape(1, 1)
            elif arr.ndim == 1:
                arr = arr.reshape(1, -1)
            elif arr.ndim != 2:
                raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.param = param
        self.name = name
        self.tid = next(_ids)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on shape {self.data.shape}")
        return float(self.data[0, 0])

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy(), param=self.param, name=self.name)

    def __repr__(self) -> str:
        tag = f" name={self.name}" if self.name else ""
        return f"<Tensor {self.data.shape}{tag}>"


class Tape:
    """Topologically ordered op records for one forward pass."""

    def __init__(self):
        # each record is (output id, tuple of input ids, backward closure)
        self.records: list[tuple[int, tuple[int, ...], object]] = []
        self.watched: dict[int, Tensor] = {}
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def needs_grad(self, t: Tensor) -> bool:
        """True when `t` is a parameter or was produced by a taped op."""
        return t.param or t.tid in self._produced

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward) -> None:
        for t in inputs:
            if t.param:
                self.watched[t.tid] = t
        self._produced.add(out.tid)
        self.records.append((out.tid, tuple([t.tid for t in inputs]), backward))

    def gradients(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradient of `loss` w.r.t. every watched parameter, by tensor id.

        Watched parameters the loss does not reach get zero gradients.
        """
        if loss.data.size != 1:
            raise NonScalarLoss(f"loss has shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {loss.tid: np.ones((1, 1))}
        for out_id, in_ids, backward_fn in reversed(self.records):
            g_out = grads.get(out_id)
            if g_out is None:
                continue
            for tid, g_in in zip(in_ids, backward_fn(g_out)):
                if g_in is None:
                    continue
                if tid in grads:
                    grads[tid] = grads[tid] + g_in
                else:
                    grads[tid] = g_in
        out = {}
        for tid, t in self.watched.items():
            g = grads.get(tid)
            out[tid] = np.zeros_like(t.data) if g is None else g
        return out


_ACTIVE: list[Tape] = []


def _tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep over `tape`; returns {parameter tensor id: gradient}."""
    return tape.gradients(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != shape:
        raise ShapeMismatch(f"cannot reduce grad {g.shape} to {shape}")
    return out


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    t = _tape()
    if t is not None:
        ad, bd = a.data, b.data
        t.record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    return out


def _broadcastable(sa, sb) -> bool:
    return all(x == y or x == 1 or y == 1 for x, y in zip(sa, sb))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    same = sa == sb
    if not same and not _broadcastable(sa, sb):
        raise ShapeMismatch(f"add {sa} + {sb}")
    out = Tensor(a.data + b.data)
    t = _tape()
    if t is not None:
        if same:
            t.record(out, (a, b), lambda g: (g, g))
        else:
            t.record(out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    same = sa == sb
    if not same and not _broadcastable(sa, sb):
        raise ShapeMismatch(f"mul {sa} * {sb}")
    out = Tensor(a.data * b.data)
    t = _tape()
    if t is not None:
        ad, bd = a.data, b.data
        if same:
            t.record(out, (a, b), lambda g: (g * bd, g * ad))
        else:
            t.record(out, (a, b), lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)))
    return out


def affine(x: Tensor, a: float, b: float = 0.0) -> Tensor:
    """a * x + b with scalar constants."""
    x = _as_tensor(x)
    out = Tensor(a * x.data + b)
    t = _tape()
    if t is not None:
        t.record(out, (x,), lambda g: (a * g,))
    return out


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if axis not in (0, 1):
        raise ShapeMismatch(f"concat axis {axis}")
    other = 1 - axis
    if len({p.data.shape[other] for p in parts}) != 1:
        raise ShapeMismatch(f"concat shapes {[p.data.shape for p in parts]}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    t = _tape()
    if t is not None:
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]
        t.record(out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=axis)))
    return out


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0.0))
    t = _tape()
    if t is not None:
        mask = x.data > 0.0
        t.record(out, (x,), lambda g: (g * mask,))
    return out


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)
    t = _tape()
    if t is not None:
        t.record(out, (x,), lambda g: (g * (1.0 - y * y),))
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(y)
    t = _tape()
    if t is not None:
        t.record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def softmax(x: Tensor) -> Tensor:
    """Row softmax; each output row sums to 1 within 1e-12."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor(y)
    t = _tape()
    if t is not None:
        t.record(out, (x,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))
    return out


def gather_rows(x: Tensor, idx) -> Tensor:
    """Row lookup (embedding-style); backward scatter-adds."""
    x = _as_tensor(x)
    ii = np.asarray(idx, dtype=np.int64).reshape(-1)
    if ii.size and (ii.min() < 0 or ii.max() >= x.data.shape[0]):
        raise ShapeMismatch(f"gather index out of range for {x.data.shape}")
    out = Tensor(x.data[ii])
    t = _tape()
    if t is not None:
        shape = x.data.shape

        def bwd(g):
            gx = np.zeros(shape)
            np.add.at(gx, ii, g)
            return (gx,)

        t.record(out, (x,), bwd)
    return out


def slice_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    x = _as_tensor(x)
    if not (0 <= j0 < j1 <= x.data.shape[1]):
        raise ShapeMismatch(f"slice [{j0}:{j1}] of {x.data.shape}")
    out = Tensor(x.data[:, j0:j1])
    t = _tape()
    if t is not None:
        shape = x.data.shape

        def bwd(g):
            gx = np.zeros(shape)
            gx[:, j0:j1] = g
            return (gx,)

        t.record(out, (x,), bwd)
    return out


def transpose(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.T.copy())
    t = _tape()
    if t is not None:
        t.record(out, (x,), lambda g: (g.T,))
    return out


def mean(x: Tensor, axis: int = 0) -> Tensor:
    x = _as_tensor(x)
    n = x.data.shape[axis]
    out = Tensor(x.data.mean(axis=axis, keepdims=True))
    t = _tape()
    if t is not None:
        shape = x.data.shape
        t.record(out, (x,), lambda g: (np.broadcast_to(g / n, shape).copy(),))
    return out


def sum_all(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.array([[x.data.sum()]]))
    t = _tape()
    if t is not None:
        shape = x.data.shape
        t.record(out, (x,), lambda g: (np.full(shape, g[0, 0]),))
    return out


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.log(x.data))
    t = _tape()
    if t is not None:
        xd = x.data
        t.record(out, (x,), lambda g: (g / xd,))
    return out


def powc(x: Tensor, c: float) -> Tensor:
    """Elementwise x**c for a constant exponent."""
    x = _as_tensor(x)
    out = Tensor(x.data ** c)
    t = _tape()
    if t is not None:
        if c == 0.0:
            t.record(out, (x,), lambda g: (np.zeros_like(g),))
        else:
            xd = x.data
            t.record(out, (x,), lambda g: (g * c * xd ** (c - 1.0),))
    return out


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi))
    t = _tape()
    if t is not None:
        mask = (x.data > lo) & (x.data < hi)
        t.record(out, (x,), lambda g: (g * mask,))
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: keep with prob 1-rate, scale kept values by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ShapeMismatch(f"dropout rate {rate} outside [0, 1)")
    x = _as_tensor(x)
    if rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep)
    t = _tape()
    if t is not None:
        t.record(out, (x,), lambda g: (g * keep,))
    return out


# ---------------------------------------------------------------------------
# initialization


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   name: str | None = None) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), param=True, name=name)


def zeros(rows: int, cols: int, name: str | None = None) -> Tensor:
    return Tensor(np.zeros((rows, cols)), param=True, name=name)


def embedding_table(rng: np.random.Generator, count: int, dim: int,
                    name: str | None = None) -> Tensor:
    return Tensor(rng.normal(0.0, 0.02, size=(count, dim)), param=True, name=name)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: OptimizerState) -> OptimizerState:
    """Decoupled-weight-decay update with bias-corrected moments, in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name in sorted(params):
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"grad {g.shape} vs param {p.data.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= state.lr * (update + state.weight_decay * p.data)
    return state


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(f, params: dict[str, Tensor], eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    `f` must be a deterministic closure over `params` returning a scalar
    Tensor; it is re-evaluated with coordinates perturbed in place.
    """
    with Tape() as tape:
        loss = f()
    gmap = tape.gradients(loss)
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        analytic = gmap.get(p.tid, np.zeros_like(p.data))
        it = np.nditer(p.data, flags=["multi_index"])
        while not it.finished:
            ij = it.multi_index
            orig = p.data[ij]
            p.data[ij] = orig + eps
            hi = f().item()
            p.data[ij] = orig - eps
            lo = f().item()
            p.data[ij] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic[ij]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
            it.iternext()
    return worst


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, then sorted named float64 LE blobs

_MAGIC = b"CKPT"
_VERSION = 1


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", _VERSION, len(params)))
    for name in sorted(params):
        data = params[name].data
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", data.ndim))
        for d in data.shape:
            buf.write(struct.pack("<I", d))
        buf.write(data.astype("<f8").tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> dict[str, Tensor]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise CheckpointError("bad checkpoint magic")
    off = 4
    version, count = struct.unpack_from("<II", raw, off)
    off += 8
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from("<" + "I" * ndim, raw, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        end = off + 8 * n
        if end > len(raw):
            raise CheckpointError(f"truncated checkpoint at byte {off}")
        arr = np.frombuffer(raw[off:end], dtype="<f8").reshape(shape).copy()
        off = end
        out[name] = Tensor(arr, param=True, name=name)
    return out
