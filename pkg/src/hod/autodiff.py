"""N-dimensional tensors with reverse-mode automatic differentiation.

Storage is row-major contiguous numpy; there are no strided views. Every
primitive records its parents and a backward closure; the tape is the
creation-ordered list of nodes reachable from a loss, and backward walks
it in exact reverse order. Precision is a process-wide mode (float64 for
verification, float32 for throughput) and must not be mixed inside one
tape.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DataError, NumericalError, ShapeError

_DTYPE = np.float64
_GRAD_ENABLED = True
_ID_COUNTER = itertools.count()

GELU_CUBIC_COEFF = 0.044715  # tanh-approximation constant


def set_default_dtype(dtype) -> None:
    global _DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ConfigError(f"unsupported dtype {dtype!r}, use float32 or float64")
    _DTYPE = dt.type


def get_default_dtype():
    return _DTYPE


@contextmanager
def precision(dtype):
    """Temporarily switch the process-wide float precision."""
    global _DTYPE
    prev = _DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DTYPE = prev


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DTYPE)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._id = next(_ID_COUNTER)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same storage, no graph edge: gradients stop here."""
        t = Tensor.__new__(Tensor)
        t.data = self.data
        t.requires_grad = False
        t.grad = None
        t._id = next(_ID_COUNTER)
        t._parents = ()
        t._backward = None
        return t

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through the module-level primitives.
    def __add__(self, other):
        return add(self, _wrap(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self))

    def __rtruediv__(self, other):
        return div(_wrap(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        if value.data.dtype != like.data.dtype:
            raise ShapeError(
                f"mixed precision in one graph: {value.data.dtype} vs {like.data.dtype}"
            )
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


def _node(out_data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    # Op outputs keep the dtype the inputs produced; only user-facing
    # Tensor() construction casts to the ambient default.
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(out_data)
    out.requires_grad = False
    out.grad = None
    out._id = next(_ID_COUNTER)
    out._parents = ()
    out._backward = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"mixed precision in one graph: {sorted(map(str, dtypes))}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def tape(loss: Tensor) -> list[Tensor]:
    """Nodes reachable from ``loss`` in execution (topological) order.

    Creation order is a valid topological order because an op's inputs
    exist before its output. Each node appears exactly once.
    """
    seen = set()
    nodes = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if t._id in seen:
            continue
        seen.add(t._id)
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._id)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate reverse-mode gradients of a scalar loss into ``.grad``.

    Tensors created without ``requires_grad`` receive nothing. Calling
    twice without clearing gradients accumulates additively.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = tape(loss)
    flow: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for t in reversed(nodes):
        g = flow.pop(t._id, None)
        if g is None:
            continue
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g
        if t._backward is None:
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in flow:
                flow[parent._id] = flow[parent._id] + pg
            else:
                flow[parent._id] = pg


# ---------------------------------------------------------------------------
# Elementwise and shape primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    b = _wrap(b, a)
    out = a.data + b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    b = _wrap(b, a)
    out = a.data - b.data
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    b = _wrap(b, a)
    out = a.data * b.data
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    b = _wrap(b, a)
    out = a.data / b.data
    return _node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def pow_(a: Tensor, exponent: float) -> Tensor:
    out = a.data ** exponent
    return _node(out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _node(out, (a,), lambda g: (g * (a.data > 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a: Tensor) -> Tensor:
    """GELU with the tanh approximation (smooth, so gradcheck is exact)."""
    x = a.data
    c = float(np.sqrt(2.0 / np.pi))
    inner = c * (x + GELU_CUBIC_COEFF * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = c * (1.0 + 3.0 * GELU_CUBIC_COEFF * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _node(out, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def slice_(a: Tensor, key) -> Tensor:
    """Basic slicing only: ints and slices, no fancy indexing."""
    out = a.data[key]

    def bw(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return _node(out, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    _check_same_dtype(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _node(out, tuple(tensors), bw)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _node(out, (a,), bw)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul operands need >= 2 dims, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    _check_same_dtype(a, b)
    out = a.data @ b.data

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(out, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x @ w + b with b broadcast over the leading axes."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ShapeError(
            f"ids out of range [0, {table.shape[0]}): [{ids.min()}, {ids.max()}]"
        )
    out = table.data[ids]

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _node(out, (table,), bw)


# ---------------------------------------------------------------------------
# Normalizations and reductions used by the encoders
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _node(out, (a,), bw)


def log_softmax(a: Tensor, axis: int) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), bw)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis with affine parameters."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(
            f"layernorm affine shapes {gain.shape}/{bias.shape} do not match "
            f"feature dim {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def bw(g):
        lead = tuple(range(x.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        m = dxhat.mean(axis=-1, keepdims=True)
        mx = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m - xhat * mx)
        return dx, dgain, dbias

    return _node(out, (x, gain, bias), bw)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data ** 2).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    out = x.data / norm

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - out * dot) / norm,)

    return _node(out, (x,), bw)


# ---------------------------------------------------------------------------
# Structured primitives: convolutions and batch normalization
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Same-padded stride-1 cross-correlation, x [N,C_in,H,W], w [C_out,C_in,k,k]."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d operands, got {x.shape}, {w.shape}")
    n, c_in, height, width = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if kh != kw:
        raise ConfigError(f"conv2d kernels must be square, got {kh}x{kw}")
    if kh % 2 == 0:
        raise ConfigError(f"conv2d supports odd kernels only, got k={kh}")
    if c_in_w != c_in:
        raise ShapeError(f"conv2d channel mismatch: input {c_in}, kernel {c_in_w}")
    pad = (kh - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, c_out, height, width), dtype=x.data.dtype)
    for u in range(kh):
        for v in range(kw):
            patch = xp[:, :, u : u + height, v : v + width]
            out += np.einsum("nchw,oc->nohw", patch, w.data[:, :, u, v], optimize=True)
    if b is not None:
        out = out + b.data.reshape(1, c_out, 1, 1)

    def bw(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for u in range(kh):
            for v in range(kw):
                patch = xp[:, :, u : u + height, v : v + width]
                dw[:, :, u, v] = np.einsum("nohw,nchw->oc", g, patch, optimize=True)
                dxp[:, :, u : u + height, v : v + width] += np.einsum(
                    "nohw,oc->nchw", g, w.data[:, :, u, v], optimize=True
                )
        dx = dxp[:, :, pad : pad + height, pad : pad + width]
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, bw)


def tconv1d_dw(x: Tensor, w: Tensor) -> Tensor:
    """Depthwise same-padded temporal cross-correlation, x [N,C,T], w [C,kt]."""
    if x.ndim != 3 or w.ndim != 2:
        raise ShapeError(f"tconv1d_dw expects [N,C,T] and [C,kt], got {x.shape}, {w.shape}")
    n, c, t_len = x.shape
    c_w, kt = w.shape
    if kt % 2 == 0:
        raise ConfigError(f"tconv1d_dw supports odd kernels only, got kt={kt}")
    if c_w != c:
        raise ShapeError(f"tconv1d_dw channel mismatch: input {c}, kernel {c_w}")
    if kt > 2 * t_len + 1:
        raise ShapeError(f"temporal kernel kt={kt} too long for T={t_len}")
    pad = (kt - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    out = np.zeros_like(x.data)
    for j in range(kt):
        out += xp[:, :, j : j + t_len] * w.data[:, j][None, :, None]

    def bw(g):
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(w.data)
        for j in range(kt):
            dxp[:, :, j : j + t_len] += g * w.data[:, j][None, :, None]
            dw[:, j] = (g * xp[:, :, j : j + t_len]).sum(axis=(0, 2))
        return dxp[:, :, pad : pad + t_len], dw

    return _node(out, (x, w), bw)


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over [N,C,H,W].

    Training mode normalizes with batch statistics (biased variance) and
    updates the running buffers in place; eval mode normalizes with the
    running buffers. Buffers are plain arrays, not graph nodes.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects [N,C,H,W], got {x.shape}")
    n, c, height, width = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError("batchnorm2d affine parameters must have shape [C]")
    if training:
        m = n * height * width
        if m < 2:
            raise DataError(
                "batchnorm2d training needs at least 2 values per channel, "
                f"got N*H*W={m}"
            )
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
        m = None
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat * gamma.data[None, :, None, None] + beta.data[None, :, None, None]

    def bw(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        dxhat = g * gamma.data[None, :, None, None]
        if not training:
            return dxhat * inv[None, :, None, None], dgamma, dbeta
        sum_dxhat = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        dx = (inv[None, :, None, None] / m) * (
            m * dxhat - sum_dxhat - xhat * sum_dxhat_xhat
        )
        return dx, dgamma, dbeta

    return _node(out, (x, gamma, beta), bw)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradcheckReport:
    max_rel_err: float
    passed: bool
    n_coords: int

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return f"gradcheck {status}: max_rel_err={self.max_rel_err:.3e} over {self.n_coords} coords"


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Union[Tensor, tuple]],
    tol: float = 1e-4,
    h: float = 1e-5,
    seed: int = 0,
    max_coords: int = 10_000,
) -> GradcheckReport:
    """Compare analytic gradients of ``fn`` against central differences.

    ``inputs`` entries are either Tensors (checked if they require grad)
    or shape tuples, which get filled with seeded standard normals. The
    output is projected to a scalar with fixed random weights. Evaluation
    runs in 64-bit precision; above ``max_coords`` total coordinates a
    seeded random subsample is checked.
    """
    if get_default_dtype() is not np.float64:
        raise NumericalError("gradcheck requires float64 mode")
    rng = np.random.default_rng(seed)
    tensors = []
    for item in inputs:
        if isinstance(item, Tensor):
            tensors.append(item)
        else:
            tensors.append(Tensor(rng.standard_normal(item), requires_grad=True))

    name = getattr(fn, "__name__", repr(fn))
    out = fn(*tensors)
    if not np.isfinite(out.data).all():
        raise NumericalError(f"non-finite forward value in {name}")
    proj = rng.standard_normal(out.shape)
    loss = sum_(mul(out, Tensor(proj)))
    for t in tensors:
        t.zero_grad()
    backward(loss)

    def scalar() -> float:
        with no_grad():
            value = fn(*tensors)
        if not np.isfinite(value.data).all():
            raise NumericalError(f"non-finite forward value in {name}")
        return float((value.data * proj).sum())

    checked = [t for t in tensors if t.requires_grad]
    coords = [(i, j) for i, t in enumerate(checked) for j in range(t.size)]
    if len(coords) > max_coords:
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[p] for p in sorted(picks)]

    max_rel = 0.0
    for i, j in coords:
        t = checked[i]
        flat = t.data.reshape(-1)
        orig = flat[j]
        flat[j] = orig + h
        f_plus = scalar()
        flat[j] = orig - h
        f_minus = scalar()
        flat[j] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        analytic = 0.0 if t.grad is None else float(t.grad.reshape(-1)[j])
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)

    return GradcheckReport(max_rel_err=max_rel, passed=max_rel <= tol, n_coords=len(coords))
