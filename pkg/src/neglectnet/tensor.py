"""Dense NCHW tensors with reverse-mode automatic differentiation.

Every op takes and returns :class:`Tensor`.  A result records its parents and a
closure that pushes the incoming gradient back to them; :meth:`Tensor.backward`
walks that graph once in reverse topological order.

Arrays are 32-bit by default.  :func:`precision` switches the dtype of newly
created tensors, which :func:`grad_check` uses to run finite differences in
64-bit.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOG_EPS = 1e-12

_dtype: type = np.float32
_grad_enabled = True


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A value or gradient became non-finite."""


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Create tensors with ``dtype`` inside the block (float32 or float64)."""
    global _dtype
    prev, _dtype = _dtype, np.dtype(dtype).type
    try:
        yield
    finally:
        _dtype = prev


def default_dtype():
    return _dtype


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Skip graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
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
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def _accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype)
        if g.shape != self.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every tensor reachable from ``self`` that requires it.

        Leaf gradients accumulate across calls; interior gradients are reset.
        """
        order = _topo_order(self)
        for node in order:
            if node._backward is not None:
                node.grad = None
        if grad is None:
            grad = np.ones_like(self.data)
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# ---------------------------------------------------------------- convolution


def _check_4d(x: Tensor, what: str) -> None:
    if x.ndim != 4:
        raise DimensionError(f"{what} must be BxCxHxW, got shape {x.shape}")


def _windows(xp: np.ndarray, k: int, stride: int) -> np.ndarray:
    """View of all KxK patches: (B, C, Ho, Wo, K, K)."""
    return sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def _scatter_patches(cols: np.ndarray, out_hw: tuple[int, int], stride: int) -> np.ndarray:
    """Adjoint of :func:`_windows`. ``cols`` is (B, Ho, Wo, C, K, K)."""
    b, ho, wo, c, k, _ = cols.shape
    out = np.zeros((b, c) + out_hw, dtype=cols.dtype)
    hs = stride * (ho - 1) + 1
    ws = stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + hs:stride, j:j + ws:stride] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _crop(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return x[:, :, p:-p, p:-p]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with a square ``OxCxKxK`` kernel."""
    _check_4d(x, "conv2d input")
    _check_4d(weight, "conv2d weight")
    o, c, k, k2 = weight.shape
    if k != k2:
        raise DimensionError("only square kernels are supported")
    if x.shape[1] != c:
        raise DimensionError(f"input has {x.shape[1]} channels, weight expects {c}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    h, w = x.shape[2:]
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(f"kernel {k} larger than padded input {h}x{w}")

    xp = _pad(x.data, padding)
    cols = _windows(xp, k, stride)
    out = np.tensordot(cols, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if x.requires_grad:
            dcols = np.tensordot(g, weight.data, axes=([1], [0]))  # B,Ho,Wo,C,K,K
            x._accumulate(_crop(_scatter_patches(dcols, xp.shape[2:], stride), padding))
        if weight.requires_grad:
            weight._accumulate(np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _result(np.ascontiguousarray(out), parents, backward)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution; ``weight`` is ``CxOxKxK`` (input channels first)."""
    _check_4d(x, "conv_transpose2d input")
    _check_4d(weight, "conv_transpose2d weight")
    c, o, k, _ = weight.shape
    if x.shape[1] != c:
        raise DimensionError(f"input has {x.shape[1]} channels, weight expects {c}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    b, _, h, w = x.shape
    full = ((h - 1) * stride + k, (w - 1) * stride + k)
    if full[0] <= 2 * padding or full[1] <= 2 * padding:
        raise DimensionError("padding removes the whole output")

    cols = np.tensordot(x.data, weight.data, axes=([1], [0]))  # B,H,W,O,K,K
    out = _crop(_scatter_patches(cols, full, stride), padding)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gcols = _windows(_pad(g, padding), k, stride)  # B,O,H,W,K,K
        if x.requires_grad:
            gx = np.tensordot(gcols, weight.data, axes=([1, 4, 5], [1, 2, 3]))
            x._accumulate(gx.transpose(0, 3, 1, 2))
        if weight.requires_grad:
            weight._accumulate(np.tensordot(x.data, gcols, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return _result(np.ascontiguousarray(out), parents, backward)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    _check_4d(x, "upsample input")
    if factor == 1:
        out = x.data.copy()
    else:
        out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    b, c, h, w = x.shape

    def backward(g):
        x._accumulate(g.reshape(b, c, h, factor, w, factor).sum(axis=(3, 5)))

    return _result(out, (x,), backward)


# --------------------------------------------------------------- normalization


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalization over the spatial axes."""
    _check_4d(x, "instance_norm input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"affine parameters must have shape ({c},)")
    n = x.shape[2] * x.shape[3]
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    g4 = gamma.data[None, :, None, None]
    out = g4 * xhat + beta.data[None, :, None, None]

    def backward(g):
        if x.requires_grad:
            dxhat = g * g4
            s1 = dxhat.sum(axis=(2, 3), keepdims=True)
            s2 = (dxhat * xhat).sum(axis=(2, 3), keepdims=True)
            x._accumulate(inv_std * (dxhat - s1 / n - xhat * s2 / n))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2, 3)))

    return _result(out, (x, gamma, beta), backward)


# ----------------------------------------------------------------- pointwise


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data >= 0
    out = np.where(pos, x.data, slope * x.data)

    def backward(g):
        x._accumulate(np.where(pos, g, slope * g))

    return _result(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, clipped so the result stays strictly inside (0, 1)."""
    d = x.data
    out = 0.5 * (1.0 + np.tanh(0.5 * d))
    fi = np.finfo(out.dtype)
    out = np.clip(out, fi.tiny, 1.0 - fi.epsneg)

    def backward(g):
        x._accumulate(g * out * (1.0 - out))

    return _result(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - out * out))

    return _result(out, (x,), backward)


def log(x: Tensor) -> Tensor:
    """Natural log with the argument clamped below at ``LOG_EPS``."""
    safe = np.maximum(x.data, LOG_EPS)
    out = np.log(safe)

    def backward(g):
        x._accumulate(np.where(x.data > LOG_EPS, g / safe, 0.0))

    return _result(out, (x,), backward)


# ------------------------------------------------------------------ binary ops


def _broadcast_kind(a: np.ndarray, b: np.ndarray) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0 or b.shape == (1,):
        return "scalar_b"
    if a.ndim == 0 or a.shape == (1,):
        return "scalar_a"
    if a.ndim == 4 and b.ndim == 4 and a.shape[0] == b.shape[0] and a.shape[2:] == b.shape[2:]:
        if b.shape[1] == 1:
            return "chan_b"
        if a.shape[1] == 1:
            return "chan_a"
    raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) <= 1 and int(np.prod(shape)) == 1:
        return np.asarray(g.sum()).reshape(shape)
    return g.sum(axis=1, keepdims=True)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.data, b.data)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.shape))

    return _result(out, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product; a 1-channel operand broadcasts over channels."""
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_kind(a.data, b.data)
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.shape))

    return _result(out, (a, b), backward)


def neg(x: Tensor) -> Tensor:
    def backward(g):
        x._accumulate(-g)

    return _result(-x.data, (x,), backward)


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def mean(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    out = x.data.mean(axis=axis)
    count = x.data.size // max(np.size(out), 1)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g / count, x.shape))
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis) / count, x.shape))

    return _result(out, (x,), backward)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference as a scalar tensor."""
    if a.shape != b.shape:
        raise DimensionError(f"l1_distance shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    out = np.abs(diff).mean()

    def backward(g):
        s = np.sign(diff) * (g / n)
        if a.requires_grad:
            a._accumulate(s)
        if b.requires_grad:
            b._accumulate(-s)

    return _result(out, (a, b), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_4d(a, "concat operand")
    _check_4d(b, "concat operand")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise DimensionError(f"concat needs matching batch/spatial dims: {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[:, :ca])
        if b.requires_grad:
            b._accumulate(g[:, ca:])

    return _result(out, (a, b), backward)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check_4d(x, "slice input")
    out = x.data[:, start:stop].copy()

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        x._accumulate(full)

    return _result(out, (x,), backward)


# ------------------------------------------------------------ gradient check


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-3, dtype=np.float64,
               max_per_input: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central finite differences.

    ``f`` closes over ``inputs`` and returns a scalar tensor.  Inputs are
    temporarily cast to ``dtype`` and everything ``f`` creates is built at that
    precision; original data is restored afterwards.  ``max_per_input`` probes
    a seeded random subset of each input's elements instead of all of them.
    """
    rng = np.random.default_rng(seed)
    saved = [(t.data, t.requires_grad, t.grad) for t in inputs]
    try:
        for t in inputs:
            t.data = t.data.astype(dtype)
            t.requires_grad = True
            t.grad = None
        with precision(dtype):
            out = f()
            if out.size != 1:
                raise DimensionError("grad_check needs a scalar-valued function")
            out.backward()
            analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
            worst = 0.0
            with no_grad():
                for t, a in zip(inputs, analytic):
                    flat = t.data.reshape(-1)
                    af = a.reshape(-1)
                    probe = range(flat.size)
                    if max_per_input is not None and flat.size > max_per_input:
                        probe = np.sort(rng.choice(flat.size, max_per_input, replace=False))
                    for i in probe:
                        orig = flat[i]
                        flat[i] = orig + eps
                        fp = float(f().data)
                        flat[i] = orig - eps
                        fm = float(f().data)
                        flat[i] = orig
                        num = (fp - fm) / (2.0 * eps)
                        if not (np.isfinite(num) and np.isfinite(af[i])):
                            raise NumericError(f"non-finite gradient at element {i} of {t!r}")
                        denom = max(abs(af[i]), abs(num), 1e-8)
                        worst = max(worst, abs(af[i] - num) / denom)
        return worst
    finally:
        for t, (d, rg, g) in zip(inputs, saved):
            t.data, t.requires_grad, t.grad = d, rg, g
