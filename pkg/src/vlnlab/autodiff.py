"""Dense float64 tensors with a dynamic reverse-mode tape.

Every op returns a new :class:`Tensor`. When any input tracks gradients the
output records its parents and a backward closure; the tape is simply the set
of such records reachable from a root, ordered by creation sequence number.
Broadcasting is limited to scalar-times-tensor (:func:`scale`); every other
shape mismatch raises :class:`DimensionError`.

Gradients accumulate across :func:`backward` calls until :func:`zero_grad`.
"""

from __future__ import annotations

import contextlib
import itertools
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_seq_counter = itertools.count()
_grad_enabled = True


class DimensionError(ValueError):
    """Shapes of op inputs are incompatible."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an op (e.g. log of <= 0)."""


class OracleError(RuntimeError):
    """The gradient oracle could not run (e.g. non-deterministic function)."""


class CheckpointError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf", _parents=(), _backward=None):
        arr = np.array(data, dtype=DTYPE)
        if arr.size == 0:
            raise DimensionError("tensors must have at least one element")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = _parents
        self._backward = _backward
        self._seq = next(_seq_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar; all of these route through the checked functions below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation rollouts)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _make(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    out._seq = next(_seq_counter)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_finite_input(x: Tensor, op: str) -> None:
    if not np.all(np.isfinite(x.data)):
        raise DomainError(f"{op}: non-finite input")


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- binary ops


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a: Tensor, k: float) -> Tensor:
    k = float(k)
    return _make(a.data * k, (a,), lambda g: (g * k,), "scale")


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    try:
        fn = {"add": add, "mul": mul, "sub": sub}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, b)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product: 2-D@2-D, matrix-vector 2-D@1-D, or vector-matrix 1-D@2-D."""
    ad, bd = a.data, b.data
    if ad.ndim + bd.ndim < 3 or ad.ndim > 2 or bd.ndim > 2 or ad.shape[-1] != bd.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = ad @ bd

    if ad.ndim == 1:
        def backward(g):
            return bd @ g, np.outer(ad, g)
    elif bd.ndim == 1:
        def backward(g):
            return np.outer(g, bd), ad.T @ g
    else:
        def backward(g):
            return g @ bd.T, ad.T @ g

    return _make(out, (a, b), backward, "matmul")


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1:
        raise DimensionError(f"dot: expects vectors, got {a.shape}")
    _same_shape(a, b, "dot")
    ad, bd = a.data, b.data
    return _make(np.array(ad @ bd), (a, b), lambda g: (g * bd, g * ad), "dot")


# ----------------------------------------------------------------- unary ops


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    if np.any(xd <= 0):
        raise DomainError("log: input must be strictly positive")
    return _make(np.log(xd), (x,), lambda g: (g / xd,), "log")


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,), "neg")


def unary(x: Tensor, kind: str) -> Tensor:
    try:
        fn = {"tanh": tanh, "sigmoid": sigmoid, "exp": exp, "log": log, "neg": neg}[kind]
    except KeyError:
        raise ValueError(f"unknown unary kind {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------- shape utilities


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != bd.ndim or axis >= ad.ndim:
        raise DimensionError(f"concat: incompatible shapes {a.shape} and {b.shape} on axis {axis}")
    other = [s for i, s in enumerate(ad.shape) if i != axis]
    if other != [s for i, s in enumerate(bd.shape) if i != axis]:
        raise DimensionError(f"concat: incompatible shapes {a.shape} and {b.shape} on axis {axis}")
    split = ad.shape[axis]
    out = np.concatenate([ad, bd], axis=axis)

    def backward(g):
        ga, gb = np.split(g, [split], axis=axis)
        return ga, gb

    return _make(out, (a, b), backward, "concat")


def mean(tensors: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of same-shape tensors; each input receives grad/M."""
    if not tensors:
        raise DimensionError("mean: needs at least one tensor")
    first = tensors[0]
    for t in tensors[1:]:
        _same_shape(first, t, "mean")
    m = len(tensors)
    if m == 1:
        return first
    if all(np.array_equal(t.data, first.data) for t in tensors[1:]):
        out = first.data.copy()  # exact: (c + c + c) / 3 may round away from c
    else:
        out = np.add.reduce([t.data for t in tensors]) / m
    return _make(out, tuple(tensors), lambda g: (g / m,) * m, "mean")


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape vectors into rows."""
    if not tensors:
        raise DimensionError("stack: needs at least one tensor")
    for t in tensors[1:]:
        _same_shape(tensors[0], t, "stack")
    out = np.stack([t.data for t in tensors])
    return _make(out, tuple(tensors), lambda g: tuple(g), "stack")


def slice_(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous slice along the first axis."""
    n = x.shape[0]
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice: [{start}:{stop}] out of range for shape {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _make(x.data[start:stop], (x,), backward, "slice")


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup ``table[ids]`` (embedding lookup)."""
    idx = np.asarray(ids, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError(f"take_rows: table must be 2-D, got {table.shape}")
    if idx.size == 0 or idx.min() < 0 or idx.max() >= table.shape[0]:
        raise IndexError(f"take_rows: ids out of range for table with {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _make(table.data[idx], (table,), backward, "take_rows")


def sum_(x: Tensor) -> Tensor:
    shape = x.shape
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),), "sum")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-wise ``x + b`` for a matrix x (L×n) and vector b (n); the one sanctioned broadcast."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"add_bias: cannot add bias {b.shape} to {x.shape}")
    return _make(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


# ------------------------------------------------------- softmax and losses


def _softmax_np(v: np.ndarray) -> np.ndarray:
    z = v - v.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 1:
        raise DimensionError(f"softmax: expects a vector, got shape {x.shape}")
    _check_finite_input(x, "softmax")
    y = _softmax_np(x.data)

    def backward(g):
        return (y * (g - g @ y),)

    return _make(y, (x,), backward, "softmax")


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """``-log softmax(logits)[target]`` for a logit vector."""
    if logits.data.ndim != 1:
        raise DimensionError(f"cross_entropy: expects a vector, got shape {logits.shape}")
    n = logits.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"cross_entropy: target {target} out of range for {n} classes")
    v = logits.data
    z = v - v.max()
    lse = np.log(np.exp(z).sum())
    p = np.exp(z - lse)
    loss = lse - z[target]

    def backward(g):
        d = p.copy()
        d[target] -= 1.0
        return (g * d,)

    return _make(np.array(loss), (logits,), backward, "cross_entropy")


def sequence_cross_entropy(logits: Tensor, targets: Sequence[int], weights: Sequence[float] | None = None) -> Tensor:
    """Weighted mean of per-row cross entropies for an (L×V) logit matrix."""
    if logits.data.ndim != 2 or logits.shape[0] != len(targets):
        raise DimensionError(f"sequence_cross_entropy: {logits.shape} vs {len(targets)} targets")
    tg = np.asarray(targets, dtype=np.int64)
    if tg.min() < 0 or tg.max() >= logits.shape[1]:
        raise IndexError("sequence_cross_entropy: target out of range")
    w = np.ones(len(tg)) if weights is None else np.asarray(weights, dtype=DTYPE)
    total = w.sum()
    if total <= 0:
        raise ValueError("sequence_cross_entropy: weights sum to zero")
    w = w / total
    v = logits.data
    z = v - v.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    p = np.exp(z - lse[:, None])
    rows = np.arange(len(tg))
    loss = float(w @ (lse - z[rows, tg]))

    def backward(g):
        d = p.copy()
        d[rows, tg] -= 1.0
        return (g * w[:, None] * d,)

    return _make(np.array(loss), (logits,), backward, "sequence_cross_entropy")


# ------------------------------------------------------------ fused LSTM ops
#
# Weight layout: W is (n_in + n_hid) x 4*n_hid acting on [x, h]; gate order
# input, forget, candidate, output.


def _lstm_forward(X, W, b, n):
    L, n_in = X.shape
    Wh = W[n_in:]
    pre_x = X @ W[:n_in] + b
    H = np.empty((L, n))
    C = np.empty((L, n))
    G = np.empty((L, 4 * n))  # activated gates
    h = np.zeros(n)
    c = np.zeros(n)
    for t in range(L):
        a = pre_x[t] + h @ Wh
        g = G[t]
        g[:] = 0.5 * (1.0 + np.tanh(0.5 * a))
        g[2 * n:3 * n] = np.tanh(a[2 * n:3 * n])
        c = g[n:2 * n] * c + g[:n] * g[2 * n:3 * n]
        h = g[3 * n:] * np.tanh(c)
        H[t] = h
        C[t] = c
    return H, C, G


def lstm_seq(X: Tensor, W: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Run a single-layer LSTM over the rows of X from zero state; returns all hidden rows.

    With ``reverse=True`` the sequence is consumed last-to-first and the
    output rows are re-aligned with the input positions.
    """
    Xd = X.data
    if Xd.ndim != 2:
        raise DimensionError(f"lstm_seq: input must be 2-D, got {X.shape}")
    n = b.shape[0] // 4
    if W.shape != (Xd.shape[1] + n, 4 * n) or b.shape != (4 * n,):
        raise DimensionError(f"lstm_seq: W {W.shape} / b {b.shape} do not fit input {X.shape}")
    Xr = Xd[::-1] if reverse else Xd
    Wd = W.data
    H, C, G = _lstm_forward(Xr, Wd, b.data, n)
    L, n_in = Xr.shape

    def backward(gH):
        gHr = gH[::-1] if reverse else gH
        i, f, gg, o = G[:, :n], G[:, n:2 * n], G[:, 2 * n:3 * n], G[:, 3 * n:]
        C_prev = np.vstack([np.zeros((1, n)), C[:-1]])
        tc = np.tanh(C)
        # per-step coefficients; only the dh/dc recursion stays in the loop
        k_c = o * (1.0 - tc * tc)
        k_dc = np.hstack([gg * i * (1.0 - i), C_prev * f * (1.0 - f), i * (1.0 - gg * gg)])
        k_dh = tc * o * (1.0 - o)
        WhT = Wd[n_in:].T
        dA = np.empty((L, 4 * n))
        dh_next = np.zeros(n)
        dc_next = np.zeros(n)
        for t in range(L - 1, -1, -1):
            dh = gHr[t] + dh_next
            dc = dc_next + dh * k_c[t]
            da = dA[t]
            da[:3 * n] = np.tile(dc, 3) * k_dc[t]
            da[3 * n:] = dh * k_dh[t]
            dc_next = dc * f[t]
            dh_next = da @ WhT
        Hprev = np.vstack([np.zeros((1, n)), H[:-1]])
        gW = np.vstack([Xr.T @ dA, Hprev.T @ dA])
        gX = dA @ Wd[:n_in].T
        if reverse:
            gX = gX[::-1]
        return gX, gW, dA.sum(axis=0)

    return _make(H[::-1].copy() if reverse else H, (X, W, b), backward, "lstm_seq")


def lstm_cell(x: Tensor, hc: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """One LSTM step. ``hc`` packs [h, c] (length 2n); returns the new packed state."""
    n = b.shape[0] // 4
    xd, hcd = x.data, hc.data
    if xd.ndim != 1 or hcd.shape != (2 * n,) or W.shape != (xd.shape[0] + n, 4 * n):
        raise DimensionError(f"lstm_cell: x {x.shape}, hc {hc.shape}, W {W.shape} incompatible")
    Wd = W.data
    h_prev, c_prev = hcd[:n], hcd[n:]
    inp = np.concatenate([xd, h_prev])
    a = inp @ Wd + b.data
    gates = 0.5 * (1.0 + np.tanh(0.5 * a))
    gates[2 * n:3 * n] = np.tanh(a[2 * n:3 * n])
    i, f, gg, o = gates[:n], gates[n:2 * n], gates[2 * n:3 * n], gates[3 * n:]
    c = f * c_prev + i * gg
    tc = np.tanh(c)
    h = o * tc
    n_in = xd.shape[0]

    def backward(g):
        dh, dc_out = g[:n], g[n:]
        dc = dc_out + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * c_prev * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            dh * tc * o * (1.0 - o),
        ])
        dinp = Wd @ da
        dhc = np.concatenate([dinp[n_in:], dc * f])
        return dinp[:n_in], dhc, np.outer(inp, da), da

    return _make(np.concatenate([h, c]), (x, hc, W, b), backward, "lstm_cell")


# ----------------------------------------------------------------- backward


def graph_nodes(root: Tensor) -> list[Tensor]:
    """Tape records reachable from ``root`` in insertion (creation) order."""
    seen: dict[int, Tensor] = {}
    stack_ = [root]
    while stack_:
        t = stack_.pop()
        if id(t) in seen or not t.requires_grad:
            continue
        seen[id(t)] = t
        stack_.extend(t._parents)
    return sorted(seen.values(), key=lambda t: t._seq)


def backward(root: Tensor) -> int:
    """Populate ``.grad`` on every gradient-tracking tensor reachable from a scalar root.

    Returns the number of tape nodes visited (each exactly once).
    """
    if root.data.size != 1:
        raise ValueError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        raise ValueError("backward: root does not depend on any gradient-tracking tensor")
    nodes = graph_nodes(root)
    pending: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    for node in reversed(nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    return len(nodes)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ------------------------------------------------------------ gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_coords: int
    worst_index: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def gradient_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-6,
    tol: float = 1e-4,
    coords: Sequence[int] | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare reverse-mode ``d f(x) / dx`` against central differences.

    ``f`` is evaluated with ``x.data`` perturbed in place, so closures over
    model parameters work by passing the parameter itself as ``x``.
    """
    first = f(x)
    second = f(x)
    if first.data.size != 1:
        raise OracleError("gradient_check: f must return a scalar")
    if first.data.tobytes() != second.data.tobytes():
        raise OracleError("gradient_check: f is not deterministic")
    was_tracking = x.requires_grad
    x.requires_grad = True
    saved_grad = x.grad
    x.grad = None
    out = f(x)
    backward(out)
    analytic = np.zeros(x.size) if x.grad is None else x.grad.reshape(-1).copy()
    x.grad = saved_grad
    x.requires_grad = was_tracking

    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst, worst_i, count = 0.0, -1, 0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            fp = f(x).item()
            flat[i] = orig - step
            fm = f(x).item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            err = relative_error(analytic[i], numeric, floor)
            count += 1
            if err > worst:
                worst, worst_i = err, i
    return GradCheckReport(worst, tol, count, worst_i)


# --------------------------------------------------------------- checkpoints
#
# Layout (all little-endian):
#   magic b"VLNCKPT\0" | version u8 | tag_len u16 | tag utf8 | n_records u32
#   per record: name_len u16 | name utf8 | ndim u8 | dims u32 * ndim | float64 * prod(dims)

MAGIC = b"VLNCKPT\x00"
VERSION = 1


def dump_checkpoint(records: Iterable[tuple[str, np.ndarray]], tag: str = "") -> bytes:
    records = list(records)
    tag_b = tag.encode("utf-8")
    parts = [MAGIC, struct.pack("<BH", VERSION, len(tag_b)), tag_b, struct.pack("<I", len(records))]
    for name, arr in records:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def parse_checkpoint(blob: bytes) -> tuple[str, "OrderedDict[str, np.ndarray]"]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    try:
        version, tag_len = struct.unpack_from("<BH", blob, 8)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 11
        tag = blob[pos:pos + tag_len].decode("utf-8")
        pos += tag_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, pos)
            pos += 4 * ndim
            nbytes = 8 * int(np.prod(shape))
            if pos + nbytes > len(blob):
                raise CheckpointError(f"truncated record {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(DTYPE)
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last record")
    return tag, out


def save_checkpoint(path: str | Path, records: Iterable[tuple[str, np.ndarray]], tag: str = "") -> None:
    Path(path).write_bytes(dump_checkpoint(records, tag))


def load_checkpoint(path: str | Path) -> tuple[str, "OrderedDict[str, np.ndarray]"]:
    return parse_checkpoint(Path(path).read_bytes())
