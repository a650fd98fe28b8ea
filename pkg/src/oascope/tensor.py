"""Dense float64 tensors with tape-style reverse-mode automatic differentiation.

Everything is stored row-major as numpy float64. The graph is rebuilt on
every forward pass (operations record a backward closure at creation time),
so data-dependent topologies such as activation-generated convolution
filters need no special handling. Gradients flow to every leaf created with
``requires_grad=True``; repeated :func:`backward` calls accumulate.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_seq_counter = itertools.count()
_thread_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_thread_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (cheap eval forwards)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _thread_state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _thread_state.grad_enabled = self._prev
        return False


class RngState:
    """Reproducible PCG64 random stream. Identical seed, identical draws."""

    algorithm = "pcg64"

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, *keys: int) -> "RngState":
        """Fork a child stream keyed by integers, e.g. (seed, fold_id)."""
        child = np.random.SeedSequence([self.seed, *[int(k) for k in keys]])
        return RngState(int(child.generate_state(1, np.uint64)[0]))

    def __repr__(self):
        return f"RngState(seed={self.seed})"


class Tensor:
    """A dense float64 array plus the bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if 0 in arr.shape:
            raise ShapeError(f"zero-size dimension in shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._seq = next(_seq_counter)
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"


def parameter(data, rng: RngState | None = None, scale_: float | None = None) -> Tensor:
    """Leaf tensor that collects gradients."""
    if rng is not None:
        arr = rng.generator.normal(0.0, scale_ if scale_ is not None else 1.0, size=data)
        return Tensor(arr, requires_grad=True)
    return Tensor(data, requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = True
    out._parents = parents
    out._backward = backward_fn
    out._seq = next(_seq_counter)
    out._op = op
    return out


def _tracked(*tensors) -> bool:
    return _grad_enabled() and any(t.requires_grad for t in tensors)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad leaf reachable from a scalar loss.

    Nodes are visited exactly once, in reverse creation order. Calling again
    without zeroing grads accumulates.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = []
    seen = set()
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._backward is not None:
            nodes.append(t)
            stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss._backward is None:
        if loss.requires_grad:
            g = grads[id(loss)]
            loss.grad = g if loss.grad is None else loss.grad + g
        return
    for node in nodes:
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise, linear algebra


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    data = a.data + b.data
    if not _tracked(a, b):
        return Tensor(data)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _make(data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    data = a.data * b.data
    if not _tracked(a, b):
        return Tensor(data)

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _make(data, (a, b), bw, "mul")


def elementwise(a, b, op: str) -> Tensor:
    """Broadcasting pointwise combination, op in {"add", "mul"}."""
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    raise ValueError(f"elementwise op must be 'add' or 'mul', got {op!r}")


def scale(x, s: float) -> Tensor:
    x = as_tensor(x)
    s = float(s)
    data = x.data * s
    if not _tracked(x):
        return Tensor(data)

    def bw(g):
        return (g * s,)

    return _make(data, (x,), bw, "scale")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions do not broadcast, {a.shape} x {b.shape}") from None
    data = a.data @ b.data
    if not _tracked(a, b):
        return Tensor(data)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return (ga, gb)

    return _make(data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w.T (+ b) as one fused graph node; w is [out_features, in_features].

    The hottest operation in every layer, so it carries its own backward
    instead of composing transpose + matmul + add.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[-1]:
        raise ShapeError(f"linear: input width {x.shape} vs weight {w.shape}")
    data = x.data @ w.data.T
    if b is not None:
        b = as_tensor(b)
        data = data + b.data
    if not (_grad_enabled() and (x.requires_grad or w.requires_grad
                                 or (b is not None and b.requires_grad))):
        return Tensor(data)
    batch_axes = tuple(range(x.data.ndim - 1))

    if b is None:
        def bw(g):
            gx = g @ w.data if x.requires_grad else None
            gw = np.tensordot(g, x.data, axes=(batch_axes, batch_axes)) \
                if w.requires_grad else None
            return (gx, gw)

        return _make(data, (x, w), bw, "linear")

    def bw(g):
        gx = g @ w.data if x.requires_grad else None
        gw = np.tensordot(g, x.data, axes=(batch_axes, batch_axes)) \
            if w.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return (gx, gw, gb)

    return _make(data, (x, w, b), bw, "linear")


# ---------------------------------------------------------------------------
# nonlinearities, normalization


def relu(x) -> Tensor:
    x = as_tensor(x)
    data = np.maximum(x.data, 0.0)
    if not _tracked(x):
        return Tensor(data)
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _make(data, (x,), bw, "relu")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    if np.isnan(x.data).any():
        raise ValueError("softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    if not _tracked(x):
        return Tensor(data)

    def bw(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _make(data, (x,), bw, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise ValueError("log_softmax input contains NaN")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    data = shifted - lse
    if not _tracked(x):
        return Tensor(data)
    probs = np.exp(data)

    def bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(data, (x,), bw, "log_softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then gain, bias."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be > 0, got {eps}")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    data = xhat * gain.data + bias.data
    if not _tracked(x, gain, bias):
        return Tensor(data)

    def bw(g):
        gx = ggain = gbias = None
        if gain.requires_grad:
            ggain = _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            gbias = _unbroadcast(g, bias.shape)
        if x.requires_grad:
            h = g * gain.data
            gx = inv * (h - h.mean(axis=-1, keepdims=True)
                        - xhat * (h * xhat).mean(axis=-1, keepdims=True))
        return (gx, ggain, gbias)

    return _make(data, (x, gain, bias), bw, "layer_norm")


def dropout(x, p: float, rng: RngState, training: bool) -> Tensor:
    """Zero entries with probability p and rescale survivors; identity in eval."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must satisfy 0 <= p < 1, got {p}")
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    keep = rng.generator.random(x.shape) >= p
    factor = keep / (1.0 - p)
    data = x.data * factor
    if not _tracked(x):
        return Tensor(data)

    def bw(g):
        return (g * factor,)

    return _make(data, (x,), bw, "dropout")


# ---------------------------------------------------------------------------
# shape manipulation, reductions, indexing


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    data = x.data.reshape(shape)
    if not _tracked(x):
        return Tensor(data)

    def bw(g):
        return (g.reshape(x.shape),)

    return _make(data, (x,), bw, "reshape")


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    data = x.data.transpose(axes)
    if not _tracked(x):
        return Tensor(data)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inverse),)

    return _make(data, (x,), bw, "transpose")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    if not _grad_enabled() or not any(t.requires_grad for t in tensors):
        return Tensor(data)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(data, tuple(tensors), bw, "concat")


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    data = np.asarray(data)
    if not _tracked(x):
        return Tensor(data)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(data, (x,), bw, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        n = x.shape[axis]
    return scale(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def gather_rows(x, idx) -> Tensor:
    """Select rows x[idx] along the first axis; gradients scatter-add back."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.size == 0:
        raise ShapeError("gather_rows with empty index")
    if idx.min() < 0 or idx.max() >= x.shape[0]:
        raise ShapeError(f"gather_rows index out of range for first dim {x.shape[0]}")
    data = x.data[idx]
    if not _tracked(x):
        return Tensor(data)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(data, (x,), bw, "gather_rows")


def gather_pairs(x, idx) -> Tensor:
    """out[i] = x[i, idx[i]] for a 2-D tensor."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(x.shape[0])
    data = x.data[rows, idx]
    if not _tracked(x):
        return Tensor(data)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _make(data, (x,), bw, "gather_pairs")


# ---------------------------------------------------------------------------
# dynamic 1-D convolution (filter size == stride, non-overlapping windows)


def _conv_checks(length: int, filters: Tensor, stride: int):
    f_count, f_size = filters.shape[-2], filters.shape[-1]
    if f_size != stride:
        raise ShapeError(f"filter size {f_size} must equal stride {stride}")
    if length % stride != 0:
        raise ShapeError(f"input length {length} not divisible by stride {stride}")
    return f_count, length // stride


def conv1d_dynamic(inputs, filters, biases, stride: int) -> Tensor:
    """Convolve every input row with every filter group.

    inputs  [rows, L], filters [groups, F, S], biases [groups, F] or [groups, 1],
    stride S == filter size. Per (row, group) the F feature maps of width L/S
    are flattened filter-major, giving [rows, groups, F * (L/S)].
    """
    inputs, filters, biases = as_tensor(inputs), as_tensor(filters), as_tensor(biases)
    rows, length = inputs.shape
    groups = filters.shape[0]
    f_count, width = _conv_checks(length, filters, stride)
    if biases.shape[0] != groups or biases.shape[1] not in (1, f_count):
        raise ShapeError(f"biases shape {biases.shape} incompatible with filters {filters.shape}")
    windows = reshape(inputs, (rows, 1, width, stride))
    kernels = reshape(transpose(filters, (0, 2, 1)), (1, groups, stride, f_count))
    maps = transpose(matmul(windows, kernels), (0, 1, 3, 2))  # [rows, groups, F, width]
    maps = add(maps, reshape(biases, (1, groups, biases.shape[1], 1)))
    return reshape(maps, (rows, groups, f_count * width))


def conv1d_paired(inputs, filters, biases, stride: int) -> Tensor:
    """Row j convolved with its own filter group j.

    inputs [rows, L], filters [rows, F, S], biases [rows, F] or [rows, 1];
    output [rows, F * (L/S)], flattened filter-major.
    """
    inputs, filters, biases = as_tensor(inputs), as_tensor(filters), as_tensor(biases)
    rows, length = inputs.shape
    if filters.shape[0] != rows:
        raise ShapeError(f"paired conv needs one filter group per row, {filters.shape[0]} != {rows}")
    f_count, width = _conv_checks(length, filters, stride)
    windows = reshape(inputs, (rows, width, stride))
    kernels = transpose(filters, (0, 2, 1))  # [rows, S, F]
    maps = transpose(matmul(windows, kernels), (0, 2, 1))  # [rows, F, width]
    maps = add(maps, reshape(biases, (rows, biases.shape[1], 1)))
    return reshape(maps, (rows, f_count * width))
