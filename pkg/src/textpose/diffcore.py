"""Minimal differentiable-computation kernel.

Dense numpy tensors plus the primitives the pose generator needs (affine map,
exact GELU, layer normalization, softmax, scaled dot-product multi-head
attention, dropout) and the handful of taped helper ops the training losses
are composed of. Reverse-mode gradients are recorded on an explicit
computation tape; replaying the tape in reverse execution order is a valid
topological order of the graph.

Training runs in float32; gradient checking casts parameters to float64.
Every primitive raises NumericsError if it produces NaN/Inf.
"""

from __future__ import annotations

import math
import struct

import numpy as np
from scipy.special import erf, expit

LN_EPS = 1e-5
_NORMALIZE_TINY = 1e-24  # added under the sqrt in l2_normalize to avoid 0/0

PGCK_MAGIC = b"PGCK1\x00"

_nan_checks = True


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """Invalid primitive configuration (e.g. head count, dropout rate)."""


class NumericsError(ArithmeticError):
    """A primitive produced NaN or Inf."""


def set_nan_checks(enabled: bool) -> None:
    global _nan_checks
    _nan_checks = bool(enabled)


class Tensor:
    """A dense array tracked by (at most) one computation tape."""

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # arithmetic sugar; scalars are untracked constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("divide by a scalar or use explicit ops")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class Parameter(Tensor):
    """Learnable tensor with a persistent gradient accumulator and stable name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=np.float32):
        super().__init__(np.array(data, dtype=dtype))
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Tape:
    """Explicit record of executed primitives, replayed in reverse for grads."""

    __slots__ = ("_entries",)

    def __init__(self):
        self._entries = []

    def __len__(self):
        return len(self._entries)

    def record(self, out, inputs, backward) -> None:
        self._entries.append((out, inputs, backward))

    def backward(self, root: Tensor) -> None:
        root.grad = np.ones_like(root.data)
        for out, inputs, backward in reversed(self._entries):
            if out.grad is None:
                continue
            grads = backward(out.grad)
            for tensor, g in zip(inputs, grads):
                if tensor is None or g is None:
                    continue
                if tensor.grad is None:
                    tensor.grad = g
                else:
                    tensor.grad = tensor.grad + g


def _tape_of(*tensors) -> Tape | None:
    for t in tensors:
        if isinstance(t, Tensor) and t.tape is not None:
            return t.tape
    return None


def _make(out_data: np.ndarray, inputs, backward, op: str) -> Tensor:
    if _nan_checks and not np.all(np.isfinite(out_data)):
        raise NumericsError(f"non-finite values in output of {op}")
    tape = _tape_of(*inputs)
    out = Tensor(out_data, tape=tape)
    if tape is not None:
        tape.record(out, inputs, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce grad back to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _const_data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    ad, bd = _const_data(a), _const_data(b)
    at = a if isinstance(a, Tensor) else None
    bt = b if isinstance(b, Tensor) else None

    def backward(g):
        return (_unbroadcast(g, ad.shape) if at is not None else None,
                _unbroadcast(g, bd.shape) if bt is not None else None)

    return _make(ad + bd, (at, bt), backward, "add")


def sub(a, b) -> Tensor:
    ad, bd = _const_data(a), _const_data(b)
    at = a if isinstance(a, Tensor) else None
    bt = b if isinstance(b, Tensor) else None

    def backward(g):
        return (_unbroadcast(g, ad.shape) if at is not None else None,
                _unbroadcast(-g, bd.shape) if bt is not None else None)

    return _make(ad - bd, (at, bt), backward, "sub")


def mul(a, b) -> Tensor:
    ad, bd = _const_data(a), _const_data(b)
    at = a if isinstance(a, Tensor) else None
    bt = b if isinstance(b, Tensor) else None

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if at is not None else None,
                _unbroadcast(g * ad, bd.shape) if bt is not None else None)

    return _make(ad * bd, (at, bt), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = _const_data(a), _const_data(b)
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} @ {bd.shape}")
    at = a if isinstance(a, Tensor) else None
    bt = b if isinstance(b, Tensor) else None

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if at is not None else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if bt is not None else None
        return ga, gb

    return _make(ad @ bd, (at, bt), backward, "matmul")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), backward, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    in_shape = a.data.shape

    def backward(g):
        return (g.reshape(in_shape),)

    return _make(a.data.reshape(shape), (a,), backward, "reshape")


def take(a: Tensor, indices, axis: int) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(np.moveaxis(ga, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (ga,)

    return _make(np.take(a.data, idx, axis=axis), (a,), backward, "take")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), backward, "concat")


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    in_shape = a.data.shape

    def backward(g):
        return (_unbroadcast(g, in_shape),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), backward, "broadcast_to")


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    in_shape = a.data.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, in_shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        return (g * out_data,)

    return _make(out_data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    def backward(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), backward, "log")


def sigmoid(a: Tensor) -> Tensor:
    out_data = expit(a.data)

    def backward(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, (a,), backward, "sigmoid")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through inside [lo, hi], zero outside."""
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        return (g * inside,)

    return _make(np.clip(a.data, lo, hi), (a,), backward, "clip")


def eucnorm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along one axis, zero subgradient at the origin."""
    norm = np.sqrt((a.data ** 2).sum(axis=axis, keepdims=True))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(norm > 0.0, norm, 1.0)
        return (np.where(norm > 0.0, g * a.data / safe, 0.0),)

    out_data = norm if keepdims else np.squeeze(norm, axis=axis)
    return _make(out_data, (a,), backward, "eucnorm")


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Scale rows to unit norm; exact gradient of x / sqrt(|x|^2 + tiny)."""
    n = np.sqrt((a.data ** 2).sum(axis=axis, keepdims=True) + _NORMALIZE_TINY)
    out_data = a.data / n

    def backward(g):
        dot = (g * a.data).sum(axis=axis, keepdims=True)
        return (g / n - a.data * dot / n ** 3,)

    return _make(out_data, (a,), backward, "l2_normalize")


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    soft = e / s

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    out_data = m + np.log(s)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)
    return _make(out_data, (a,), backward, "logsumexp")


# ---------------------------------------------------------------------------
# network primitives
# ---------------------------------------------------------------------------

def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b over the last axis of x."""
    xd, wd, bd = x.data, w.data, b.data
    if xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"affine: input {xd.shape} incompatible with weight {wd.shape}")
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, wd.shape[0])
    out_data = (x2 @ wd + bd).reshape(*lead, wd.shape[1])

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    return _make(out_data, (x, w, b), backward, "affine")


def gelu(x: Tensor) -> Tensor:
    """Exact GELU x * Phi(x) using the Gaussian CDF (not the tanh form)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * xd ** 2) / math.sqrt(2.0 * math.pi)

    def backward(g):
        return (g * (cdf + xd * pdf),)

    return _make(xd * cdf, (x,), backward, "gelu")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Per-row zero mean / unit variance over the last axis, then scale+shift."""
    xd = x.data
    d = xd.shape[-1]
    if d < 2:
        raise ShapeError("layer_norm needs a last axis of size >= 2")
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv_std
    out_data = gain.data * xhat + bias.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = inv_std * (dxhat
                        - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        dgain = (g * xhat).sum(axis=reduce_axes) if reduce_axes else g * xhat
        dbias = g.sum(axis=reduce_axes) if reduce_axes else g
        return dx, dgain, dbias

    return _make(out_data, (x, gain, bias), backward, "layer_norm")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax (max-subtraction); rows sum to 1."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _make(out_data, (x,), backward, "softmax")


def dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability p and rescales
    survivors by 1/(1-p); eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout requires a seeded rng")
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype)
    scale = keep / (1.0 - p)

    def backward(g):
        return (g * scale,)

    return _make(x.data * scale, (x,), backward, "dropout")


def multi_head_attention(x: Tensor, *, wq, bq, wk, bk, wv, bv, wo, bo,
                         num_heads: int) -> Tensor:
    """Scaled dot-product self-attention with output projection.

    Accepts [S, d] or [B, S, d]; residual connections are the caller's job.
    """
    d = x.data.shape[-1]
    if d % num_heads != 0:
        raise ConfigError(f"model dim {d} not divisible by {num_heads} heads")
    dh = d // num_heads
    squeeze = x.data.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.data.shape)
    batch, seq, _ = x.data.shape

    def split_heads(t):
        return transpose(reshape(t, (batch, seq, num_heads, dh)), (0, 2, 1, 3))

    q = split_heads(affine(x, wq, bq))
    k = split_heads(affine(x, wk, bk))
    v = split_heads(affine(x, wv, bv))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = softmax(scores, axis=-1)
    ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (batch, seq, d))
    out = affine(ctx, wo, bo)
    if squeeze:
        out = reshape(out, out.data.shape[1:])
    return out


# ---------------------------------------------------------------------------
# checkpoint I/O (PGCK1)
# ---------------------------------------------------------------------------

def save_checkpoint(params: dict, path) -> None:
    """Write named arrays: magic, u32 count, then per parameter u32 name
    length + name + u32 rank + u64 dims + float32 values row-major."""
    with open(path, "wb") as fh:
        fh.write(PGCK_MAGIC)
        fh.write(struct.pack("<I", len(params)))
        for name, value in params.items():
            arr = np.ascontiguousarray(value.data if isinstance(value, Tensor) else value,
                                       dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> dict:
    """Read a PGCK1 file back into an ordered {name: float32 array} dict."""
    with open(path, "rb") as fh:
        data = fh.read()

    def take_bytes(offset, n, what):
        if offset + n > len(data):
            raise ValueError(f"checkpoint truncated at offset {len(data)} reading {what}")
        return data[offset:offset + n]

    if take_bytes(0, len(PGCK_MAGIC), "magic") != PGCK_MAGIC:
        raise ValueError(f"bad checkpoint magic {data[:len(PGCK_MAGIC)]!r}")
    off = len(PGCK_MAGIC)
    (count,) = struct.unpack("<I", take_bytes(off, 4, "count"))
    off += 4
    params = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", take_bytes(off, 4, f"param {i} name length"))
        off += 4
        name = take_bytes(off, name_len, f"param {i} name").decode("utf-8")
        off += name_len
        (rank,) = struct.unpack("<I", take_bytes(off, 4, f"param {i} rank"))
        off += 4
        dims = struct.unpack(f"<{rank}Q", take_bytes(off, 8 * rank, f"param {i} dims"))
        off += 8 * rank
        n_vals = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take_bytes(off, 4 * n_vals, f"param {i} values"),
                            dtype="<f4").reshape(dims).copy()
        off += 4 * n_vals
        if name in params:
            raise ValueError(f"duplicate parameter name {name!r}")
        params[name] = arr
    if off != len(data):
        raise ValueError(f"{len(data) - off} trailing bytes in checkpoint")
    return params
