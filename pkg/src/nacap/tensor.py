"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Values live in C-contiguous (row-major) numpy arrays. Each forward pass
records its operations on a fresh Tape; backward() replays the tape in
reverse, accumulating gradients on every tensor it touched. When no tape is
active (inference), operations run as plain array math with no recording.

A tape and the tensors it records are confined to one thread; independent
tapes may run concurrently in separate threads.
"""

from __future__ import annotations

import math
import threading

import numpy as np

from . import kernels

LAYER_NORM_EPS = 1e-5


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class Tensor:
    """N-d array of 64-bit reals with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "node_id", "_tape_token")

    def __init__(self, data):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.node_id = None
        self._tape_token = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Flat row-major view of the values."""
        return self.data.reshape(-1)

    def item(self):
        return float(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            # own a copy: backward rules may hand out views or shared arrays
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # light operator sugar; the functional forms below are the primary API
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------

class TapeOp:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward

    @property
    def input_ids(self):
        return tuple(t.node_id for t in self.inputs)

    @property
    def output_id(self):
        return self.output.node_id


_active = threading.local()


def current_tape():
    return getattr(_active, "tape", None)


class Tape:
    """Ordered record of one forward pass; rebuilt per pass."""

    def __init__(self):
        self.ops = []
        self._next_id = 0

    def __enter__(self):
        if current_tape() is not None:
            raise RuntimeError("a tape is already active in this thread")
        _active.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _active.tape = None
        return False

    def record(self, inputs, output, backward):
        # first contact with this tape assigns a fresh id, so within a tape
        # every op's inputs carry smaller ids than its output
        nid = self._next_id
        for t in inputs:
            if t._tape_token is not self:
                t._tape_token = self
                t.node_id = nid
                nid += 1
                t.grad = None
        output._tape_token = self
        output.node_id = nid
        self._next_id = nid + 1
        self.ops.append(TapeOp(inputs, output, backward))


def backward(loss, tape):
    """Populate grads of every tensor on the tape with d(loss)/d(tensor)."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for op in reversed(tape.ops):
        g = op.output.grad
        if g is None:
            continue
        grads = op.backward(g)
        for t, gi in zip(op.inputs, grads):
            if gi is not None:
                t.accumulate_grad(gi)


def _record(inputs, output, backward_fn):
    tape = current_tape()
    if tape is not None:
        tape.record(inputs, output, backward_fn)
    return output


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def _broadcast_check(a, b, name):
    # same shape, or b a 1-D vector matching a's trailing dim (bias-style)
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        return False
    if len(sb) == 1 and sa and sa[-1] == sb[0]:
        return True
    raise ShapeError(f"{name} shapes {sa} and {sb} do not align")


def _unbroadcast(g, was_vector):
    if not was_vector:
        return g
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    vec = _broadcast_check(a, b, "add")
    out = Tensor(a.data + b.data)

    def bwd(g):
        return g, _unbroadcast(g, vec)

    return _record((a, b), out, bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    vec = _broadcast_check(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bwd(g):
        return g, -_unbroadcast(g, vec)

    return _record((a, b), out, bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    vec = _broadcast_check(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bwd(g):
        return g * b.data, _unbroadcast(g * a.data, vec)

    return _record((a, b), out, bwd)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        return (g * c,)

    return _record((a,), out, bwd)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    da, db = a.data, b.data
    if da.ndim != 2 or db.ndim != 2 or da.shape[1] != db.shape[0]:
        raise ShapeError(f"matmul shapes {da.shape} and {db.shape} do not align")
    out = Tensor(da @ db)

    def bwd(g):
        return g @ db.T, da.T @ g

    return _record((a, b), out, bwd)


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    out = Tensor(a.data.T)

    def bwd(g):
        return (g.T,)

    return _record((a,), out, bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    orig = a.shape

    def bwd(g):
        return (g.reshape(orig),)

    return _record((a,), out, bwd)


def concat(parts, axis=0):
    parts = [as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        pieces = []
        for i in range(len(parts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return pieces

    return _record(tuple(parts), out, bwd)


def slice_cols(a, start, stop):
    a = as_tensor(a)
    out = Tensor(a.data[:, start:stop])

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[:, start:stop] = g
        return (ga,)

    return _record((a,), out, bwd)


def slice_rows(a, start, stop):
    a = as_tensor(a)
    out = Tensor(a.data[start:stop])

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[start:stop] = g
        return (ga,)

    return _record((a,), out, bwd)


def gather_rows(a, indices):
    """Select rows of a 2-D tensor by index; backward scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {a.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for shape {a.shape}")
    out = Tensor(a.data[idx])

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _record((a,), out, bwd)


def embedding(table, token_ids):
    """Look up embedding rows for a token-id sequence."""
    return gather_rows(table, token_ids)


def sigmoid(a):
    a = as_tensor(a)
    out = Tensor(kernels.sigmoid(a.data))
    y = out.data

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _record((a,), out, bwd)


def tanh(a):
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))
    y = out.data

    def bwd(g):
        return (g * (1.0 - y * y),)

    return _record((a,), out, bwd)


def relu(a):
    a = as_tensor(a)
    out = Tensor(kernels.relu(a.data))
    y = out.data

    def bwd(g):
        return (g * (y > 0.0),)

    return _record((a,), out, bwd)


def softmax(a, valid_mask=None):
    """Softmax along the last axis (1-D input treated as a single row).

    valid_mask, when given, is a bool array of the same shape; entries that
    are False receive probability exactly 0 (used for causal attention).
    """
    a = as_tensor(a)
    x2 = a.data.reshape(1, -1) if a.data.ndim == 1 else a.data
    if x2.ndim != 2:
        raise ShapeError(f"softmax expects 1-D or 2-D input, got shape {a.shape}")
    if valid_mask is None:
        p2 = kernels.softmax_rows(x2)
    else:
        m2 = np.asarray(valid_mask, dtype=bool).reshape(x2.shape)
        if not m2.any(axis=1).all():
            raise ShapeError("softmax mask leaves an empty row")
        p2 = kernels.softmax_rows_masked(x2, m2)
    out = Tensor(p2.reshape(a.shape))
    probs2 = p2

    def bwd(g):
        g2 = g.reshape(probs2.shape)
        # masked entries have p=0, which zeroes their gradient automatically
        return (kernels.softmax_rows_backward(probs2, g2).reshape(a.shape),)

    return _record((a,), out, bwd)


def layer_norm(a, gain, bias, eps=LAYER_NORM_EPS):
    """Per-row zero-mean/unit-variance normalization then affine."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    x2 = a.data.reshape(1, -1) if a.data.ndim == 1 else a.data
    if x2.ndim != 2 or gain.shape != (x2.shape[1],) or bias.shape != (x2.shape[1],):
        raise ShapeError(
            f"layer_norm shapes {a.shape}, {gain.shape}, {bias.shape} do not align"
        )
    y2, xhat, inv_std = kernels.layer_norm_rows(x2, gain.data, bias.data, eps)
    out = Tensor(y2.reshape(a.shape))

    def bwd(g):
        g2 = g.reshape(x2.shape)
        dx, dgain, dbias = kernels.layer_norm_rows_backward(
            g2, xhat, inv_std, gain.data
        )
        return dx.reshape(a.shape), dgain, dbias

    return _record((a, gain, bias), out, bwd)


def cross_entropy(logits, targets, pad_id):
    """Mean negative log-likelihood over non-pad positions.

    logits: (n, V); targets: n token ids; positions equal to pad_id are
    excluded from both the sum and the count.
    """
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.intp)
    if logits.data.ndim != 2 or t.ndim != 1 or t.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy logits {logits.shape} vs {t.shape[0]} targets"
        )
    keep = t != pad_id
    count = int(keep.sum())
    if count == 0:
        raise ValueError("cross_entropy: every target is padding, mean undefined")
    v = logits.shape[1]
    real = t[keep]
    if real.min() < 0 or real.max() >= v:
        raise IndexError(f"target id out of range [0, {v})")
    x = np.clip(logits.data, -kernels.EXP_CLAMP, kernels.EXP_CLAMP)
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    rows = np.arange(t.shape[0])
    nll = lse[keep] - x[rows[keep], real]
    out = Tensor(nll.sum() / count)
    probs = kernels.softmax_rows(x)

    def bwd(g):
        gl = probs.copy()
        gl[rows[keep], real] -= 1.0
        gl[~keep] = 0.0
        return (gl * (float(g) / count),)

    return _record((logits,), out, bwd)


def mean_pool(a):
    """Mean over rows of a matrix: (k, d) -> (d,)."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"mean_pool expects a matrix, got shape {a.shape}")
    k = a.shape[0]
    out = Tensor(a.data.mean(axis=0))

    def bwd(g):
        return (np.broadcast_to(g / k, a.shape).copy(),)

    return _record((a,), out, bwd)


def sum_all(a):
    a = as_tensor(a)
    out = Tensor(a.data.sum())

    def bwd(g):
        return (np.full_like(a.data, float(g)),)

    return _record((a,), out, bwd)


def dropout(a, p, rng):
    """Inverted dropout; identity when p == 0 or rng is None."""
    if rng is None or p <= 0.0:
        return as_tensor(a)
    a = as_tensor(a)
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * mask)

    def bwd(g):
        return (g * mask,)

    return _record((a,), out, bwd)


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

_PE_CACHE = {}


def positional_encoding(n, d):
    """Sinusoidal position encodings as a constant (n, d) array."""
    key = (n, d)
    cached = _PE_CACHE.get(key)
    if cached is None:
        pe = np.zeros((n, d))
        position = np.arange(n)[:, None].astype(np.float64)
        div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
        pe[:, 0::2] = np.sin(position * div)
        pe[:, 1::2] = np.cos(position * div[: (d // 2)])
        pe.setflags(write=False)
        _PE_CACHE[key] = pe
        cached = pe
    return Tensor(cached)
