"""
Dense float64 tensors with a reverse-mode gradient tape.

Ops executed inside a ``GradTape`` context are recorded on the innermost active
tape; ``GradTape.backward(loss)`` replays them in reverse and returns one
accumulated gradient per ``requires_grad`` leaf.

Forward kernels never hand a contraction to BLAS except per-block convolutions:
each output element is accumulated in a fixed order that does not depend on how
many other rows share the array, and sums across the sequence axis sort their
terms first. A position's output is therefore bit-identical under padding and
permutation of the other positions.
"""
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from shared.exceptions import DimensionError, NumericalError, TapeError

_local = threading.local()


def _tape_stack():
    if not hasattr(_local, 'tapes'):
        _local.tapes = []
    return _local.tapes


class Tensor:
    __slots__ = ('data', 'requires_grad', 'name')

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name

    @classmethod
    def _wrap(cls, data, requires_grad=False):
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = requires_grad
        out.name = None
        return out

    @classmethod
    def parameter(cls, data, name=None):
        return cls(data, requires_grad=True, name=name)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ''
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None):
        return tensor_sum(self, axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeRecord:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable


class GradTape:
    """Records differentiable ops; one ``backward`` per tape."""

    def __init__(self):
        self._records = []
        self._consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().remove(self)
        return False

    @property
    def records(self):
        return tuple(self._records)

    @property
    def consumed(self):
        return self._consumed

    def _push(self, record):
        if self._consumed:
            raise TapeError("Cannot record on a tape that has already been consumed by backward()")
        self._records.append(record)

    def backward(self, loss, wrt=None):
        """
        Returns a dict mapping every requires_grad leaf (plus any tensor in ``wrt``)
        to d loss / d leaf. Leaves that did not influence the loss map to zeros.
        """
        if self._consumed:
            raise TapeError("backward() called twice on the same tape")
        if loss.size != 1:
            raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
        produced = {id(r.output) for r in self._records}
        if id(loss) not in produced:
            raise TapeError("loss was not produced under this tape")
        self._consumed = True

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for record in reversed(self._records):
            g = grads.pop(id(record.output), None)
            if g is None:
                continue
            for tensor, tensor_grad in zip(record.inputs, record.backward(g)):
                if not tensor.requires_grad:
                    continue
                if id(tensor) not in produced:
                    leaves[id(tensor)] = tensor
                if tensor_grad is None:
                    continue
                key = id(tensor)
                grads[key] = grads[key] + tensor_grad if key in grads else tensor_grad

        for tensor in wrt or ():
            leaves.setdefault(id(tensor), tensor)

        result = {}
        for key, leaf in leaves.items():
            g = grads.get(key)
            result[leaf] = np.zeros_like(leaf.data) if g is None else g.reshape(leaf.shape)
        self._records.clear()
        return result


def _record(op, inputs, data, backward):
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite values")
    tape = _tape_stack()[-1] if _tape_stack() else None
    tracked = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=tracked)
    if tracked:
        tape._push(TapeRecord(op, tuple(inputs), out, backward))
    return out


# --- fixed-order reduction kernels -------------------------------------------------

def ordered_sum(x, axis, keepdims=False):
    """Sum along ``axis`` after sorting: independent of term order and of extra zeros."""
    moved = np.sort(np.moveaxis(x, axis, 0), axis=0)
    total = moved[0].copy()
    for row in moved[1:]:
        total += row
    return np.expand_dims(total, axis) if keepdims else total


def _sequential_sum_last(x):
    total = x[..., 0].copy()
    for i in range(1, x.shape[-1]):
        total += x[..., i]
    return total


def _contract(a, b):
    """a[..., m, k] · b[..., k, n] accumulated left to right over k."""
    out = a[..., :, 0:1] * b[..., 0:1, :]
    for i in range(1, a.shape[-1]):
        out += a[..., :, i:i + 1] * b[..., i:i + 1, :]
    return out


def _reduce_to(grad, shape):
    """Sum a broadcast gradient back over the leading axes of ``shape``."""
    if grad.shape == tuple(shape):
        return grad
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead))).reshape(shape)


def _broadcast_pair(op, a, b):
    if a.shape == b.shape:
        return a.shape
    if a.ndim >= b.ndim and a.shape[a.ndim - b.ndim:] == b.shape:
        return a.shape
    if b.ndim > a.ndim and b.shape[b.ndim - a.ndim:] == a.shape:
        return b.shape
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ beyond a trailing bias broadcast")


# --- elementwise ------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair('add', a, b)
    sa, sb = a.shape, b.shape
    return _record('add', (a, b), a.data + b.data,
                   lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair('sub', a, b)
    sa, sb = a.shape, b.shape
    return _record('sub', (a, b), a.data - b.data,
                   lambda g: (_reduce_to(g, sa), -_reduce_to(g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_pair('mul', a, b)
    da, db = a.data, b.data
    return _record('mul', (a, b), da * db,
                   lambda g: (_reduce_to(g * db, da.shape), _reduce_to(g * da, db.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"div: shapes {a.shape} and {b.shape} must match")
    da, db = a.data, b.data
    return _record('div', (a, b), da / db,
                   lambda g: (g / db, -g * da / (db * db)))


def scale(x, factor):
    factor = float(factor)
    return _record('scale', (x,), x.data * factor, lambda g: (g * factor,))


def relu(x):
    active = x.data > 0
    return _record('relu', (x,), np.where(active, x.data, 0.0), lambda g: (g * active,))


def exp(x):
    out = np.exp(x.data)
    return _record('exp', (x,), out, lambda g: (g * out,))


def log(x):
    if np.any(x.data <= 0):
        raise NumericalError("log of a non-positive value")
    d = x.data
    return _record('log', (x,), np.log(d), lambda g: (g / d,))


def clip(x, lo, hi):
    inside = (x.data >= lo) & (x.data <= hi)
    return _record('clip', (x,), np.clip(x.data, lo, hi), lambda g: (g * inside,))


def power(x, exponent):
    exponent = float(exponent)
    d = x.data

    def backward(g):
        if exponent == 0.0:
            return (np.zeros_like(g),)
        with np.errstate(divide='ignore', invalid='ignore'):
            local = np.where(d == 0, 0.0, exponent * np.power(d, exponent - 1.0))
        return (g * local,)

    return _record('pow', (x,), np.power(d, exponent), backward)


# --- shape ------------------------------------------------------------------------

def reshape(x, shape):
    original = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"reshape: {original} -> {shape}: {e}") from e
    return _record('reshape', (x,), out, lambda g: (g.reshape(original),))


def transpose(x, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of {x.ndim} axes")
    inverse = tuple(np.argsort(axes))
    return _record('transpose', (x,), np.ascontiguousarray(x.data.transpose(axes)),
                   lambda g: (g.transpose(inverse),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    return _record('concat', tuple(tensors), np.concatenate([t.data for t in tensors], axis=axis),
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(x, index):
    """x[index] along axis 0."""
    index = np.asarray(index, dtype=np.int64)
    rows = x.shape[0]

    def backward(g):
        out = np.zeros((rows,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return _record('take_rows', (x,), x.data[index], backward)


def scatter_rows(x, index, rows):
    """Places the rows of ``x`` at ``index`` inside a zero array with ``rows`` rows."""
    index = np.asarray(index, dtype=np.int64)
    out = np.zeros((rows,) + x.shape[1:])
    out[index] = x.data
    return _record('scatter_rows', (x,), out, lambda g: (g[index],))


# --- reductions -------------------------------------------------------------------

def tensor_sum(x, axis=None):
    shape = x.shape
    if axis is None:
        out = np.asarray(x.data.sum())
        return _record('sum', (x,), out, lambda g: (np.broadcast_to(g, shape).copy(),))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % x.ndim for a in axes)
    out = x.data.sum(axis=axes)
    return _record('sum', (x,), out,
                   lambda g: (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),))


def tensor_mean(x, axis=None):
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))
    return scale(tensor_sum(x, axis), 1.0 / count)


# --- linear algebra ---------------------------------------------------------------

def matmul(a, b):
    """
    a[..., m, k] @ b[k, n] (shared right operand) or a[..., m, k] @ b[..., k, n]
    with identical leading extents.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul leading extents disagree: {a.shape} @ {b.shape}")
    da, db = a.data, b.data

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(db, -1, -2))
        if db.ndim == 2:
            grad_b = da.reshape(-1, da.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            grad_b = np.matmul(np.swapaxes(da, -1, -2), g)
        return grad_a, grad_b

    return _record('matmul', (a, b), _contract(da, db), backward)


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out


def weighted_sum(weights, values):
    """
    weights[..., q, k] mixed over values[..., k, d] -> [..., q, d]; the k-sum is
    order-free so permuting or zero-padding keys leaves results bit-identical.
    """
    if weights.shape[:-2] != values.shape[:-2] or weights.shape[-1] != values.shape[-2]:
        raise DimensionError(f"weighted_sum: {weights.shape} vs {values.shape}")
    w, v = weights.data, values.data
    products = w[..., :, :, None] * v[..., None, :, :]
    out = ordered_sum(products, axis=-2)

    def backward(g):
        return np.matmul(g, np.swapaxes(v, -1, -2)), np.matmul(np.swapaxes(w, -1, -2), g)

    return _record('weighted_sum', (weights, values), out, backward)


# --- normalisation ----------------------------------------------------------------

def softmax(x, axis=-1, mask=None):
    """
    Softmax with max-subtraction. ``mask`` (bool, broadcastable to x) marks live
    entries; masked entries get probability exactly 0, as with -inf logits.
    """
    axis = axis % x.ndim
    data = x.data
    if mask is None:
        live = np.ones(data.shape, dtype=bool)
    else:
        live = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        if not np.all(live.any(axis=axis)):
            raise DimensionError("softmax: a slice has every entry masked")
    peak = np.max(np.where(live, data, -np.inf), axis=axis, keepdims=True)
    e = np.where(live, np.exp(np.where(live, data - peak, 0.0)), 0.0)
    out = e / ordered_sum(e, axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _record('softmax', (x,), out, backward)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalises over the last axis, then applies gain and bias."""
    if eps <= 0:
        raise DimensionError("layer_norm eps must be positive")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm affine shapes {gain.shape}/{bias.shape} vs features {x.shape[-1]}")
    n = x.shape[-1]
    d = x.data
    mean = _sequential_sum_last(d)[..., None] / n
    centred = d - mean
    var = _sequential_sum_last(centred * centred)[..., None] / n
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv
    gd = gain.data
    out = xhat * gd + bias.data

    def backward(g):
        dxhat = g * gd
        grad_x = inv / n * (n * dxhat - dxhat.sum(-1, keepdims=True)
                            - xhat * (dxhat * xhat).sum(-1, keepdims=True))
        flat_g = g.reshape(-1, n)
        return grad_x, (flat_g * xhat.reshape(-1, n)).sum(0), flat_g.sum(0)

    return _record('layer_norm', (x, gain, bias), out, backward)


# --- convolution ------------------------------------------------------------------

def conv2d(x, weight, bias):
    """3x3 convolution, stride 1, zero 'same' padding. x [N, C, H, W], weight [O, C, 3, 3]."""
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} vs weight {weight.shape}")
    kh, kw = weight.shape[2:]
    n, c, h, w = x.shape
    o = weight.shape[0]
    padded = np.pad(x.data, ((0, 0), (0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))

    def columns():
        windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))  # n, c, h, w, kh, kw
        return windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, h * w)

    w2d = weight.data.reshape(o, -1)
    out = np.matmul(w2d, columns()).reshape(n, o, h, w) + bias.data[None, :, None, None]

    def backward(g):
        g2 = g.reshape(n, o, h * w)
        cols = columns()
        grad_w = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        grad_cols = np.matmul(w2d.T, g2).reshape(n, c, kh, kw, h, w)
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                grad_padded[:, :, i:i + h, j:j + w] += grad_cols[:, :, i, j]
        grad_x = grad_padded[:, :, kh // 2:kh // 2 + h, kw // 2:kw // 2 + w]
        return grad_x, grad_w, g.sum(axis=(0, 2, 3))

    return _record('conv2d', (x, weight, bias), out, backward)


def max_pool2d(x, size=2):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // size, w // size
    if h2 == 0 or w2 == 0:
        raise DimensionError(f"max_pool2d: input {x.shape} smaller than window {size}")
    cropped = x.data[:, :, :h2 * size, :w2 * size]
    windows = cropped.reshape(n, c, h2, size, w2, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, size * size)
    winner = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]

    def backward(g):
        grad_windows = np.zeros_like(windows)
        np.put_along_axis(grad_windows, winner[..., None], g[..., None], axis=-1)
        grad = grad_windows.reshape(n, c, h2, w2, size, size).transpose(0, 1, 2, 4, 3, 5)
        full = np.zeros((n, c, h, w))
        full[:, :, :h2 * size, :w2 * size] = grad.reshape(n, c, h2 * size, w2 * size)
        return (full,)

    return _record('max_pool2d', (x,), out, backward)


# --- gradient checking ------------------------------------------------------------

def gradient_check(fn, tensors, step=1e-5, points=None, rng=None):
    """
    Compares tape gradients of the scalar ``fn()`` with central differences.

    Returns {tensor name or index: max relative error}. ``points`` limits the check
    to that many random entries per tensor.
    """
    rng = rng or np.random.default_rng(0)
    with GradTape() as tape:
        loss = fn()
    analytic = tape.backward(loss, wrt=tensors)

    errors = {}
    for index, tensor in enumerate(tensors):
        flat_count = tensor.size
        if points is None or points >= flat_count:
            positions = np.arange(flat_count)
        else:
            positions = rng.choice(flat_count, size=points, replace=False)
        original = tensor.data
        numeric = np.empty(len(positions))
        for slot, pos in enumerate(positions):
            for sign in (1.0, -1.0):
                probe = original.copy()
                probe.reshape(-1)[pos] += sign * step
                tensor.data = probe
                value = fn().item()
                numeric[slot] = value if sign > 0 else (numeric[slot] - value) / (2 * step)
            tensor.data = original
        exact = analytic[tensor].reshape(-1)[positions]
        rel = np.abs(exact - numeric) / np.maximum(np.abs(exact) + np.abs(numeric), 1e-6)
        errors[tensor.name or index] = float(rel.max()) if rel.size else 0.0
    return errors
