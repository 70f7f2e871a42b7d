"""Dense tensors with reverse-mode differentiation.

Every operation on :class:`Tensor` values that require gradients records its
parents and a vector-Jacobian product.  :func:`backward` orders the recorded
graph topologically (the *tape*) and replays it in reverse, so each node is
visited once and only after all of its consumers.

Storage is 32-bit by default; wrap code in ``default_dtype(np.float64)`` to
build everything in 64-bit, which is what the finite-difference checks use.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError

_default_dtype = np.dtype(np.float32)
_grad_enabled = True
_kink_log: list | None = None


def get_default_dtype() -> np.dtype:
    return _default_dtype


def set_default_dtype(dtype) -> None:
    global _default_dtype
    _default_dtype = np.dtype(dtype)


@contextlib.contextmanager
def default_dtype(dtype):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording, e.g. for evaluation."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


@contextlib.contextmanager
def track_kinks():
    """Record the activation pattern of every piecewise-linear op.

    Yields a list that receives one boolean array per ``relu``/``abs`` call.
    Finite-difference checks compare these patterns to detect perturbations
    that cross a non-differentiable point.
    """
    global _kink_log
    previous = _kink_log
    _kink_log = []
    try:
        yield _kink_log
    finally:
        _kink_log = previous


class Tensor:
    """An n-dimensional array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype.kind == "f":
                dtype = data.dtype
            else:
                dtype = _default_dtype
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self.op = "leaf"

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method forms ------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def take(self, indices, axis=0):
        return take(self, indices, axis)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def abs(self):
        return tabs(self)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _node(data, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype if isinstance(data, np.ndarray) else None)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- binary elementwise ------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), vjp, "div")


def where(condition, a, b) -> Tensor:
    """Select from ``a`` where ``condition`` holds, else from ``b``."""
    cond = np.asarray(condition.data if isinstance(condition, Tensor) else condition, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "where")
    zero = np.zeros((), dtype=np.result_type(a.dtype, b.dtype))

    def vjp(g):
        ga = _unbroadcast(np.where(cond, g, zero), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.where(cond, zero, g), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(np.where(cond, a.data, b.data), (a, b), vjp, "where")


# -- unary elementwise -------------------------------------------------------
def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def vjp(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _node(a.data**exponent, (a,), vjp, "pow")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # two-branch form avoids overflow of exp(-x) for large negative x
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    if _kink_log is not None:
        _kink_log.append(mask)
    return _node(np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,), "relu")


def tabs(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    if _kink_log is not None:
        _kink_log.append(a.data >= 0)
    return _node(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


_UNARY = {"neg": neg, "sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log, "relu": relu, "abs": tabs}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b=None):
    """Apply a named elementwise operation.

    ``complex_mul`` takes ``(re, im)`` pairs for both operands and returns a
    pair.
    """
    if op_kind == "complex_mul":
        return complex_mul(a, b)
    if op_kind in _UNARY:
        if b is not None:
            raise ShapeError(f"{op_kind} is unary but got two operands")
        return _UNARY[op_kind](a)
    if op_kind in _BINARY:
        if b is None:
            raise ShapeError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def complex_mul(a: tuple, b: tuple) -> tuple[Tensor, Tensor]:
    """Multiply complex numbers stored as separate real/imaginary tensors."""
    ar, ai = a
    br, bi = b
    return ar * br - ai * bi, ar * bi + ai * br


# -- reductions and shape ops --------------------------------------------------
def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(np.asarray(out), (a,), vjp, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _node(out, (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    basic = _is_basic_index(index)

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (a,), vjp, "getitem")


def take(a, indices, axis=0) -> Tensor:
    """Gather rows; repeated indices accumulate gradient."""
    a = as_tensor(a)
    if axis != 0:
        raise ShapeError("take gathers along axis 0 only")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise IndexError(f"take: index out of range for {a.shape[0]} rows")
    out = a.data[idx]

    def vjp(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, idx.reshape(-1), g.reshape((-1,) + a.shape[1:]))
        return (full,)

    return _node(out, (a,), vjp, "take")


def concat(tensors: Sequence, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes " + ", ".join(str(t.shape) for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tensors, vjp, "concat")


def matmul(a, b) -> Tensor:
    """Matrix product with numpy broadcasting over leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def vjp(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), vjp, "matmul")


# -- neural network primitives --------------------------------------------------
def conv2d(x, kernel, bias=None, padding: int = 1) -> Tensor:
    """3x3 cross-correlation with zero padding 1, preserving spatial extents.

    ``x`` is ``[C_in, H, W]`` or ``[B, C_in, H, W]``; ``kernel`` is
    ``[C_out, C_in, 3, 3]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if padding != 1:
        raise ShapeError(f"conv2d supports padding 1 only, got {padding}")
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d kernel must be [C_out, C_in, 3, 3], got {kernel.shape}")
    unbatched = x.ndim == 3
    if unbatched:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be [C, H, W] or [B, C, H, W], got {x.shape}")
    B, C, H, W = x.shape
    C_out, C_in = kernel.shape[:2]
    if C != C_in:
        raise ShapeError(f"conv2d: input has {C} channels but kernel expects {C_in} (kernel {kernel.shape})")

    padded = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (3, 3), axis=(2, 3))  # B,C,H,W,3,3
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * 9)
    kmat = kernel.data.reshape(C_out, C * 9)
    out = cols @ kmat.T
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
    out = out.reshape(B, H, W, C_out).transpose(0, 3, 1, 2)

    def vjp(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(B * H * W, C_out)
        gx = gk = gb = None
        if x.requires_grad:
            gcols = (gmat @ kmat).reshape(B, H, W, C, 3, 3)
            gpad = np.zeros_like(padded)
            for i in range(3):
                for j in range(3):
                    gpad[:, :, i:i + H, j:j + W] += gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gpad[:, :, 1:-1, 1:-1]
        if kernel.requires_grad:
            gk = (gmat.T @ cols).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = gmat.sum(axis=0)
        return (gx, gk) if bias is None else (gx, gk, gb)

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    result = _node(np.ascontiguousarray(out), parents, vjp, "conv2d")
    return reshape(result, result.shape[1:]) if unbatched else result


class BatchNorm:
    """Affine batch normalization over axis 1 with running statistics."""

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        dtype = get_default_dtype()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.weight = Tensor(np.ones(num_features, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(num_features, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)

    def parameters(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def __call__(self, x, training: bool) -> Tensor:
        return batchnorm(x, self, training)


def batchnorm(x, state: BatchNorm, training: bool) -> Tensor:
    """Normalize ``[B, F]`` or ``[B, C, H, W]`` input per feature/channel."""
    x = as_tensor(x)
    if x.ndim not in (2, 4) or x.shape[1] != state.num_features:
        raise ShapeError(f"batchnorm over {state.num_features} features got input {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    gamma, beta = state.weight, state.bias
    gam = gamma.data.reshape(bshape)

    if training:
        count = x.size // state.num_features
        if x.shape[0] < 2:
            raise ShapeError(f"batchnorm in training mode needs a batch of at least 2, got {x.shape[0]}")
        mean = x.data.mean(axis=axes, keepdims=True)
        centered = x.data - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = centered * inv_std
        m = state.momentum
        unbiased = var.reshape(-1) * (count / max(count - 1, 1))
        state.running_mean = ((1 - m) * state.running_mean + m * mean.reshape(-1)).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(state.running_var.dtype)

        def vjp(g):
            gx = None
            if x.requires_grad:
                dxhat = g * gam
                gx = inv_std * (dxhat - dxhat.mean(axis=axes, keepdims=True)
                                - xhat * (dxhat * xhat).mean(axis=axes, keepdims=True))
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        mean = state.running_mean.reshape(bshape)
        inv_std = 1.0 / np.sqrt(state.running_var.reshape(bshape) + state.eps)
        xhat = (x.data - mean) * inv_std

        def vjp(g):
            gx = g * gam * inv_std if x.requires_grad else None
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = (xhat * gam + beta.data.reshape(bshape)).astype(x.dtype, copy=False)
    return _node(out, (x, gamma, beta), vjp, "batchnorm")


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability ``rate``, rescale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return _node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, targets) -> Tensor:
    """Mean cross-entropy between row-softmax and count-normalized multi-hot targets."""
    logits = as_tensor(logits)
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=logits.dtype)
    if logits.ndim != 2 or t.shape != logits.shape:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs targets {t.shape}")
    counts = t.sum(axis=1, keepdims=True)
    if np.any(counts <= 0):
        rows = np.flatnonzero(counts.reshape(-1) <= 0)
        raise ValueError(f"target rows without a positive entry: {rows[:10].tolist()}")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("softmax_cross_entropy received non-finite logits")
    tn = t / counts
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    B = logits.shape[0]
    loss = -(tn * logp).sum() / B

    def vjp(g):
        return (g * (np.exp(logp) - tn) / B,)

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), vjp, "softmax_xent")


# -- the tape -------------------------------------------------------------------
def build_tape(root: Tensor) -> list[Tensor]:
    """Topologically ordered nodes reachable from ``root`` (root last)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    When ``params`` is given, returns their gradients in order, with zeros for
    parameters the loss does not depend on.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads[id(loss)] = np.ones(loss.shape, dtype=loss.dtype)
        for node in reversed(build_tape(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
    if params is None:
        return None
    result = []
    for p in params:
        if p.grad is None:
            p.grad = np.zeros(p.shape, dtype=p.dtype)
        result.append(p.grad)
    return result


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None
