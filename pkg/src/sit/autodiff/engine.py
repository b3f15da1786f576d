"""Dense-array reverse-mode autodiff, just enough for the transformer.

An Array wraps a numpy ndarray plus an optional gradient. Ops executed while
a Tape is active record backward closures; Tape.backward replays them in
exact reverse order, accumulating gradients additively at fan-out. With no
active tape, ops are plain numpy (eval mode costs nothing extra).

Matrix ops treat the last two axes as the matrix and broadcast leading axes;
row-wise ops (softmax_rows, layernorm_rows) act on the last axis. float32 is
the training dtype; gradient checks should build float64 models.
"""

import threading

import numpy as np
from scipy.special import erf

from ..errors import DataError, ShapeError

_LN_EPS = 1e-6
_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = _tls.stack = []
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Array:
    """A numpy array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Array(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class Tape:
    """Records backward closures; context manager activates it."""

    def __init__(self):
        self._ops: list = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self, "tapes must unwind LIFO"
        return False

    def record(self, closure):
        self._ops.append(closure)

    def backward(self, root: Array):
        """Seed d(root)=1 and propagate to every recorded input."""
        if root.data.size != 1:
            raise ShapeError(f"backward root must be a scalar, got shape {root.data.shape}")
        root.grad = np.ones_like(root.data)
        for closure in reversed(self._ops):
            closure()

    def __len__(self):
        return len(self._ops)


def as_array(x) -> Array:
    return x if isinstance(x, Array) else Array(x)


def _accumulate(target: Array, grad: np.ndarray):
    # always copy on first store: `grad` may alias another node's grad buffer
    # (e.g. the identity path of add), and later `+=` must not corrupt it
    if target.grad is None:
        target.grad = np.array(grad, dtype=target.data.dtype, copy=True)
    else:
        target.grad += grad


def _sum_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back down to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _record(out: Array, inputs: list[Array], closure) -> Array:
    tape = _active_tape()
    if tape is not None and any(a.requires_grad for a in inputs):
        out.requires_grad = True
        tape.record(closure)
    return out


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul mismatch: {a.data.shape} @ {b.data.shape}")
    out = Array(a.data @ b.data)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            _accumulate(a, _sum_to(g @ _swap(b.data), a.data.shape))
        if b.requires_grad:
            _accumulate(b, _sum_to(_swap(a.data) @ g, b.data.shape))

    return _record(out, [a, b], backward)


def add(a, b) -> Array:
    a, b = as_array(a), as_array(b)
    out = Array(a.data + b.data)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            _accumulate(a, _sum_to(g, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _sum_to(g, b.data.shape))

    return _record(out, [a, b], backward)


def scale(a, factor) -> Array:
    """Elementwise product with a constant scalar or ndarray (broadcasting)."""
    a = as_array(a)
    if isinstance(factor, Array):
        raise ShapeError("scale factor must be a constant, not an Array")
    if not np.isscalar(factor):
        factor = np.asarray(factor)
    out = Array(a.data * factor)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            _accumulate(a, _sum_to(g * factor, a.data.shape))

    return _record(out, [a], backward)


def multiply(a, b) -> Array:
    """Elementwise product of two Arrays (both differentiable)."""
    a, b = as_array(a), as_array(b)
    out = Array(a.data * b.data)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            _accumulate(a, _sum_to(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _sum_to(g * a.data, b.data.shape))

    return _record(out, [a, b], backward)


def transpose(a) -> Array:
    a = as_array(a)
    if a.data.ndim < 2:
        raise ShapeError(f"transpose needs >= 2 dims, got shape {a.data.shape}")
    out = Array(_swap(a.data))

    def backward():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, _swap(out.grad))

    return _record(out, [a], backward)


def reshape(a, shape) -> Array:
    a = as_array(a)
    out = Array(a.data.reshape(shape))

    def backward():
        if out.grad is not None and a.requires_grad:
            _accumulate(a, out.grad.reshape(a.data.shape))

    return _record(out, [a], backward)


def concat(arrays, axis: int = -1) -> Array:
    arrays = [as_array(x) for x in arrays]
    if not arrays:
        raise ShapeError("concat of zero arrays")
    out = Array(np.concatenate([x.data for x in arrays], axis=axis))
    sizes = [x.data.shape[axis] for x in arrays]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        if g is None:
            return
        for x, start, stop in zip(arrays, offsets[:-1], offsets[1:]):
            if x.requires_grad:
                index = [np.s_[:]] * g.ndim
                index[axis] = np.s_[start:stop]
                _accumulate(x, g[tuple(index)])

    return _record(out, arrays, backward)


def slice(a, start: int, stop: int, axis: int) -> Array:  # noqa: A001 - op name
    a = as_array(a)
    index = [np.s_[:]] * a.data.ndim
    index[axis] = np.s_[start:stop]
    index = tuple(index)
    out = Array(a.data[index].copy())

    def backward():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _record(out, [a], backward)


def gather_rows(a, idx) -> Array:
    """Select rows along axis -2. idx is [K] (shared) or batch-shaped [..., K]."""
    a = as_array(a)
    idx = np.asarray(idx)
    if a.data.ndim < 2:
        raise ShapeError(f"gather_rows needs >= 2 dims, got {a.data.shape}")
    if idx.ndim == 1:
        out_data = np.take(a.data, idx, axis=-2)
    elif idx.shape == a.data.shape[:-1]:
        out_data = np.take_along_axis(a.data, idx[..., None], axis=-2)
    else:
        raise ShapeError(f"index shape {idx.shape} incompatible with array {a.data.shape}")
    out = Array(out_data)

    def backward():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        full = np.zeros_like(a.data)
        if idx.ndim == 1:
            # accumulate because idx may repeat rows
            np.add.at(np.moveaxis(full, -2, 0), idx, np.moveaxis(g, -2, 0))
        else:
            flat = full.reshape(-1, *full.shape[-2:])
            gflat = g.reshape(-1, *g.shape[-2:])
            iflat = idx.reshape(-1, idx.shape[-1])
            for b in range(flat.shape[0]):
                np.add.at(flat[b], iflat[b], gflat[b])
        _accumulate(a, full)

    return _record(out, [a], backward)


def softmax_rows(a) -> Array:
    """Stabilized softmax along the last axis."""
    a = as_array(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Array(y)

    def backward():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        dot = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _record(out, [a], backward)


def layernorm_rows(a, gamma, beta, eps: float = _LN_EPS) -> Array:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gamma, beta = as_array(a), as_array(gamma), as_array(beta)
    d = a.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layernorm affine shapes {gamma.data.shape}/{beta.data.shape} != ({d},)"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Array(xhat * gamma.data + beta.data)

    def backward():
        g = out.grad
        if g is None:
            return
        if beta.requires_grad:
            _accumulate(beta, g.reshape(-1, d).sum(axis=0))
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if a.requires_grad:
            gx = g * gamma.data
            term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            _accumulate(a, term * inv)

    return _record(out, [a, gamma, beta], backward)


def gelu(a) -> Array:
    """Exact (erf-based) GELU."""
    a = as_array(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    out = Array(x * cdf)

    def backward():
        g = out.grad
        if g is None or not a.requires_grad:
            return
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        _accumulate(a, g * (cdf + x * pdf))

    return _record(out, [a], backward)


def dropout(a, p: float, training: bool, rng: np.random.Generator | None = None) -> Array:
    """Inverted dropout: zero with prob p, scale survivors by 1/(1-p)."""
    a = as_array(a)
    if not 0.0 <= p < 1.0:
        raise DataError(f"dropout p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise DataError("dropout in training mode needs an rng")
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype)
    keep /= 1.0 - p  # in-place keeps the array dtype
    return scale(a, keep)


def mse(pred, target, mask=None) -> Array:
    """Mean squared error; with a mask, averaged over mask-true rows only.

    mask is boolean with shape pred.shape[:-1]; a row (last-axis vector)
    counts entirely or not at all.
    """
    pred = as_array(pred)
    target_data = target.data if isinstance(target, Array) else np.asarray(target)
    if pred.data.shape != target_data.shape:
        raise ShapeError(f"mse shapes differ: {pred.data.shape} vs {target_data.shape}")
    diff = pred.data - target_data

    if mask is None:
        denom = diff.size
        out = Array(np.asarray((diff**2).sum() / denom, dtype=pred.data.dtype))

        def backward():
            if out.grad is not None and pred.requires_grad:
                _accumulate(pred, (2.0 / denom) * diff * out.grad)

        return _record(out, [pred], backward)

    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.data.shape[:-1]:
        raise ShapeError(f"mask shape {mask.shape} != row shape {pred.data.shape[:-1]}")
    rows = int(mask.sum())
    if rows == 0:
        raise DataError("mse mask selects no rows")
    denom = rows * pred.data.shape[-1]
    masked = diff * mask[..., None]
    out = Array(np.asarray((masked**2).sum() / denom, dtype=pred.data.dtype))

    def backward():
        if out.grad is not None and pred.requires_grad:
            _accumulate(pred, (2.0 / denom) * masked * out.grad)

    return _record(out, [pred], backward)
