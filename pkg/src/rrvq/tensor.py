"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
:meth:`Tensor.backward` walks that record once in reverse topological order.

The engine is deliberately small: float64 numpy arrays, numpy-style
broadcasting for binary elementwise ops, and the handful of layers needed by
small convolutional and MLP VAEs.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, log_softmax as _np_log_softmax, logsumexp as _np_logsumexp

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "make_op",
    "no_grad",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "upsample_nearest",
    "downsample_nearest",
    "GradCheckReport",
    "grad_check",
    "grad_check_params",
]

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when an operation receives incompatible shapes."""

    def __init__(self, op: str, *shapes: tuple, detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes " + " and ".join(str(tuple(s)) for s in shapes)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteError(FloatingPointError):
    """Raised when a forward computation produces NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _as_tensor(x) -> "Tensor":
    return x if isinstance(x, Tensor) else Tensor(x)


class Tensor:
    """An n-dimensional float64 array that can take part in a gradient graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, detail="only size-1 tensors convert to a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # -- graph ------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf needing it."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward", self.shape, detail="loss must be a scalar")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator overloads -------------------------------------------------
    def __add__(self, other):
        return _add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return _sub(_as_tensor(other), self)

    def __mul__(self, other):
        return _mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return _div(_as_tensor(other), self)

    def __neg__(self):
        return make_op(-self.data, (self,), lambda g: (-g,), "neg")

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, idx):
        out = self.data[idx]
        shape = self.shape

        def back(g):
            full = np.zeros(shape)
            np.add.at(full, idx, g)
            return (full,)

        return make_op(np.array(out), (self,), back, "getitem")

    # -- elementwise ----------------------------------------------------------
    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return make_op(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        x = self.data
        return make_op(np.log(x), (self,), lambda g: (g / x,), "log")

    def square(self) -> "Tensor":
        x = self.data
        return make_op(x * x, (self,), lambda g: (2.0 * g * x,), "square")

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return make_op(out, (self,), lambda g: (0.5 * g / out,), "sqrt")

    def elu(self) -> "Tensor":
        # alpha fixed to 1
        x = self.data
        neg = np.expm1(np.minimum(x, 0.0))
        out = np.where(x > 0, x, neg)
        return make_op(out, (self,), lambda g: (g * np.where(x > 0, 1.0, neg + 1.0),), "elu")

    def sigmoid(self) -> "Tensor":
        out = expit(self.data)
        return make_op(out, (self,), lambda g: (g * out * (1.0 - out),), "sigmoid")

    def softplus(self) -> "Tensor":
        x = self.data
        return make_op(np.logaddexp(0.0, x), (self,), lambda g: (g * expit(x),), "softplus")

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return make_op(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    def clip(self, lo: float, hi: float) -> "Tensor":
        """Clamp values; the gradient is zero wherever the clamp is active."""
        x = self.data
        inside = (x >= lo) & (x <= hi)
        return make_op(np.clip(x, lo, hi), (self,), lambda g: (g * inside,), "clip")

    def maximum(self, floor: float) -> "Tensor":
        x = self.data
        above = x > floor
        return make_op(np.maximum(x, floor), (self,), lambda g: (g * above,), "maximum")

    # -- shape --------------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        try:
            out = self.data.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", old, shape) from None
        return make_op(out, (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return make_op(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- reductions ---------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape
        out = self.data.sum(axis=axis, keepdims=keepdims)

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return make_op(np.asarray(out), (self,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def logsumexp(self, axis: int = -1, keepdims: bool = False) -> "Tensor":
        x = self.data
        out = _np_logsumexp(x, axis=axis, keepdims=True)
        sm = np.exp(x - out)
        res = out if keepdims else np.squeeze(out, axis=axis)

        def back(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (g * sm,)

        return make_op(res, (self,), back, "logsumexp")

    def log_softmax(self, axis: int = -1) -> "Tensor":
        out = _np_log_softmax(self.data, axis=axis)
        sm = np.exp(out)
        return make_op(out, (self,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),), "log_softmax")

    def softmax(self, axis: int = -1) -> "Tensor":
        out = np.exp(_np_log_softmax(self.data, axis=axis))
        return make_op(out, (self,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def make_op(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[np.ndarray], Iterable[np.ndarray | None]],
    name: str,
) -> Tensor:
    """Wrap ``data`` as the output of a differentiable op.

    ``backward`` receives the output gradient and must return one gradient
    (or ``None``) per parent, already reduced to that parent's shape.
    """
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{name} produced non-finite values")
    out = Tensor(data)
    out.op = name
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def _add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def _sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return make_op(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def _mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)
    x, y = a.data, b.data
    return make_op(x * y, (a, b), lambda g: (_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)), "mul")


def _div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("div", a, b)
    x, y = a.data, b.data
    out = x / y
    return make_op(
        out, (a, b),
        lambda g: (_unbroadcast(g / y, x.shape), _unbroadcast(-g * out / y, y.shape)),
        "div",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    x, y = a.data, b.data
    return make_op(x @ y, (a, b), lambda g: (g @ y.T, x.T @ g), "matmul")


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (the channel axis by default)."""
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError("concat", ref, t.shape)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return make_op(out, tensors, lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


# -- convolution ----------------------------------------------------------------
def _windows(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def _conv_np(x, w, stride, pad):
    win = _windows(x, w.shape[2], w.shape[3], stride, pad)
    return np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)


def _conv_grad_w(x, g, kh, kw, stride, pad):
    win = _windows(x, kh, kw, stride, pad)
    ho, wo = g.shape[2], g.shape[3]
    win = win[:, :, :ho, :wo]
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def _conv_t_np(y, w, stride, pad, out_hw):
    """Adjoint of ``_conv_np``: scatter each output position back through the kernel."""
    n, _, ho, wo = y.shape
    c, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    h, wd = out_hw
    cols = np.tensordot(y, w, axes=([1], [0]))  # (n, ho, wo, c, kh, kw)
    full = np.zeros((n, c, h + 2 * pad + stride, wd + 2 * pad + stride))
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return full[:, :, pad:pad + h, pad:pad + wd]


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int | None = None) -> Tensor:
    """2-D cross-correlation. ``w`` has shape (out, in, kh, kw).

    With the default padding ``(k - 1) // 2`` a 3x3 kernel keeps the spatial
    extent at stride 1 and halves it (for even sizes) at stride 2.
    """
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError("conv2d", x.shape, w.shape)
    kh, kw = w.shape[2], w.shape[3]
    pad = (kh - 1) // 2 if padding is None else padding
    if _conv_out(x.shape[2], kh, stride, pad) < 1 or _conv_out(x.shape[3], kw, stride, pad) < 1:
        raise ShapeError("conv2d", x.shape, w.shape, detail="kernel larger than padded input")
    xd, wd = x.data, w.data
    out = _conv_np(xd, wd, stride, pad)

    def back(g):
        gx = _conv_t_np(g, wd, stride, pad, xd.shape[2:]) if x.requires_grad else None
        gw = _conv_grad_w(xd, g, kh, kw, stride, pad) if w.requires_grad else None
        return gx, gw

    res = make_op(out, (x, w), back, "conv2d")
    if bias is not None:
        res = res + bias.reshape(1, -1, 1, 1)
    return res


def conv_transpose2d(
    x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 2, padding: int = 1,
) -> Tensor:
    """Transposed convolution, the exact adjoint of :func:`conv2d`.

    ``w`` has shape (in, out, kh, kw); output side is ``(n - 1) * stride - 2 * padding + k``,
    so a 4x4 kernel with stride 2 and padding 1 doubles the spatial extent.
    """
    if stride < 1:
        raise ValueError(f"conv_transpose2d: stride must be >= 1, got {stride}")
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ShapeError("conv_transpose2d", x.shape, w.shape)
    kh, kw = w.shape[2], w.shape[3]
    h = (x.shape[2] - 1) * stride - 2 * padding + kh
    wd_ = (x.shape[3] - 1) * stride - 2 * padding + kw
    if h < 1 or wd_ < 1:
        raise ShapeError("conv_transpose2d", x.shape, w.shape, detail="empty output")
    xd, wdat = x.data, w.data
    out = _conv_t_np(xd, wdat, stride, padding, (h, wd_))

    def back(g):
        gx = _conv_np(g, wdat, stride, padding)[:, :, :xd.shape[2], :xd.shape[3]] if x.requires_grad else None
        gw = _conv_grad_w(g, xd, kh, kw, stride, padding) if w.requires_grad else None
        return gx, gw

    res = make_op(out, (x, w), back, "conv_transpose2d")
    if bias is not None:
        res = res + bias.reshape(1, -1, 1, 1)
    return res


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError("upsample_nearest", x.shape, detail="expected NCHW")
    n, c, h, w = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    return make_op(
        out, (x,),
        lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),),
        "upsample_nearest",
    )


def downsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if x.ndim != 4 or x.shape[2] % factor or x.shape[3] % factor:
        raise ShapeError("downsample_nearest", x.shape, detail=f"spatial size not divisible by {factor}")
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        full[:, :, ::factor, ::factor] = g
        return (full,)

    return make_op(x.data[:, :, ::factor, ::factor], (x,), back, "downsample_nearest")


# -- gradient checking -------------------------------------------------------------
@dataclass
class GradCheckReport:
    max_rel_dev: float
    tol: float
    worst: str = ""
    n_checked: int = 0
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_dev < self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max relative deviation {self.max_rel_dev:.3e} "
                f"(tol {self.tol:.1e}, {self.n_checked} entries, worst at {self.worst})")


def _rel_dev(a: np.ndarray, n: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check_params(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-4,
    tol: float = 1e-4,
    floor: float = 1e-8,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    order: int = 2,
) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must rebuild its graph from ``params`` on every call and use fixed
    randomness (common random numbers). The relative deviation of each entry
    is ``|a - n| / max(|a|, |n|, floor)``. ``max_entries`` subsamples entries
    per parameter when set. ``order=4`` uses the five-point stencil, whose
    truncation error is small enough to allow a larger ``step`` and so less
    round-off.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    for p in params.values():
        p.grad = None
    loss = f()
    if loss.size != 1:
        raise ShapeError("grad_check", loss.shape, detail="function must be scalar-valued")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("grad_check: function value is not finite")
    loss.backward()
    report = GradCheckReport(max_rel_dev=0.0, tol=tol)
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        numeric = np.empty(idx.size)
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]

                def at(offset):
                    flat[i] = orig + offset
                    return float(f().data)

                if order == 2:
                    numeric[j] = (at(step) - at(-step)) / (2.0 * step)
                else:
                    numeric[j] = (8.0 * (at(step) - at(-step)) - (at(2 * step) - at(-2 * step))) / (12.0 * step)
                flat[i] = orig
        dev = _rel_dev(analytic.reshape(-1)[idx], numeric, floor)
        worst = float(dev.max()) if dev.size else 0.0
        report.per_param[name] = worst
        report.n_checked += idx.size
        if worst >= report.max_rel_dev:
            report.max_rel_dev = worst
            report.worst = f"{name}[{int(idx[int(dev.argmax())])}]" if dev.size else name
    return report


def grad_check(
    f: Callable[[Tensor], Tensor],
    point,
    step: float = 1e-4,
    tol: float = 1e-4,
    floor: float = 1e-8,
) -> GradCheckReport:
    """Gradient check of a scalar function of a single tensor argument."""
    x = Tensor(np.array(point, dtype=np.float64), requires_grad=True)
    return grad_check_params(lambda: f(x), {"x": x}, step=step, tol=tol, floor=floor)


def is_finite(t: Tensor) -> bool:
    return bool(np.isfinite(t.data).all())


LOG2 = math.log(2.0)
