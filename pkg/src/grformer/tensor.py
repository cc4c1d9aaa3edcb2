"""Dense tensors with reverse-mode autodiff, just enough for this model family.

Eager numpy execution; each op output keeps references to its parents and a
closure that routes the output gradient back to them. `backward` linearizes
the reachable graph into a Tape (topological order) and walks it once in
reverse. Row-major contiguous layout throughout; no views escape an op.

Non-goals: general broadcasting beyond what the model needs, strided views,
GPU, graph rewriting.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .precision import active_dtype


def _contiguous(arr) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d scalars to 1-d; keep rank as-is.
    if not isinstance(arr, np.ndarray):
        arr = np.asarray(arr)
    return arr if arr.ndim == 0 else np.ascontiguousarray(arr)


class DimensionError(ValueError):
    """Shape/axis mismatch between operands."""


class ContractError(ValueError):
    """Call violates an operation's contract (non-scalar loss, odd split, ...)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _contiguous(np.asarray(data, dtype=dtype or active_dtype()))
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- basics ---------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) != 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, *axes) -> "Tensor":
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis, keepdims)


class Tape:
    """Topological linearization of the graph below one root.

    nodes[i]'s parents always appear at indices < i; backward walks the list
    exactly once in reverse.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = {id(root)}
        stack: list[tuple[Tensor, Iterable[Tensor]]] = [(root, iter(root._parents))]
        while stack:
            node, parents = stack[-1]
            pushed = False
            for p in parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    pushed = True
                    break
            if not pushed:
                order.append(node)
                stack.pop()
        return cls(order)


def backward(loss: Tensor) -> Tape:
    """Populate .grad for every requires_grad tensor reachable from `loss`."""
    if loss.data.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")
    tape = Tape.from_root(loss)
    loss.grad = np.ones((), dtype=loss.data.dtype)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return tape


# -- graph plumbing -----------------------------------------------------------


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _contiguous(data)
    out.grad = None
    out.requires_grad = False
    track = any(p.requires_grad or p._parents for p in parents)
    out._parents = tuple(parents) if track else ()
    out._backward = backward_fn if track else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# -- elementwise family -------------------------------------------------------


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(data, (a, b), back)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    try:
        data = a.data - b.data
    except ValueError:
        raise DimensionError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(data, (a, b), back)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _as_tensor(b, a)
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), back)


def texp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def back(g):
        _accum(x, g * data)

    return _make(data, (x,), back)


def tabs(x: Tensor) -> Tensor:
    data = np.abs(x.data)

    def back(g):
        _accum(x, g * np.sign(x.data))

    return _make(data, (x,), back)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0)

    def back(g):
        _accum(x, g * (x.data > 0))

    return _make(data, (x,), back)


_INV_SQRT2 = 0.7071067811865476
_INV_SQRT2PI = 0.3989422804014327


def gelu(x: Tensor) -> Tensor:
    """Exact erf form."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    data = x.data * cdf

    def back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        _accum(x, g * (cdf + x.data * pdf))

    return _make(data, (x,), back)


def sign(x: Tensor) -> Tensor:
    # Gradient defined as zero everywhere, including 0: the only trained paths
    # through sign are via values it is constant around.
    data = np.sign(x.data)

    def back(g):
        _accum(x, np.zeros_like(x.data))

    return _make(data, (x,), back)


# -- reductions ---------------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(gg, x.shape).copy())

    return _make(data, (x,), back)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis, keepdims), 1.0 / n)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 1 or a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(f"matmul: inner dims disagree for {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def back(g):
        _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accum(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(data, (a, b), back)


def softmax(x: Tensor, dim: int) -> Tensor:
    if not np.isfinite(x.data).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = x.data - x.data.max(axis=dim, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=dim, keepdims=True)

    def back(g):
        s = (g * data).sum(axis=dim, keepdims=True)
        _accum(x, data * (g - s))

    return _make(data, (x,), back)


def l2_normalize(x: Tensor, dim: int, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=dim, keepdims=True))
    denom = np.maximum(norm, eps)
    data = x.data / denom

    def back(g):
        live = norm > eps  # below eps the map is linear: x / eps
        s = (g * data).sum(axis=dim, keepdims=True)
        _accum(x, (g - live * data * s) / denom)

    return _make(data, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (population variance), then affine."""
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise DimensionError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} vs channels {x.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data

    def back(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accum(beta, g.sum(axis=reduce_axes))
        _accum(gamma, (g * xhat).sum(axis=reduce_axes))
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _make(data, (x, gamma, beta), back)


# -- structure ----------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = x.data.reshape(shape)

    def back(g):
        _accum(x, g.reshape(x.shape))

    return _make(data, (x,), back)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        _accum(x, np.transpose(g, inv))

    return _make(data, (x,), back)


def roll(x: Tensor, shifts: tuple[int, ...], axes: tuple[int, ...]) -> Tensor:
    data = np.roll(x.data, shifts, axis=axes)

    def back(g):
        _accum(x, np.roll(g, tuple(-s for s in shifts), axis=axes))

    return _make(data, (x,), back)


def split2(x: Tensor, dim: int) -> tuple[Tensor, Tensor]:
    n = x.shape[dim]
    if n % 2 != 0:
        raise DimensionError(f"split2: axis {dim} has odd size {n}")
    half = n // 2

    def piece(lo, hi):
        sl = tuple(slice(lo, hi) if i == (dim % x.data.ndim) else slice(None) for i in range(x.data.ndim))

        def back(g):
            full = np.zeros_like(x.data)
            full[sl] = g
            _accum(x, full)

        return _make(x.data[sl], (x,), back)

    return piece(0, half), piece(half, n)


def concat(parts: Sequence[Tensor], dim: int) -> Tensor:
    try:
        data = np.concatenate([p.data for p in parts], axis=dim)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[p.shape for p in parts]}") from None
    sizes = [p.shape[dim] for p in parts]

    def back(g):
        offsets = np.cumsum([0] + sizes)
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = tuple(slice(lo, hi) if i == (dim % g.ndim) else slice(None) for i in range(g.ndim))
            _accum(p, g[sl])

    return _make(data, tuple(parts), back)


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows of `x` (axis 0) by an integer index array of any shape."""
    data = x.data[index]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        _accum(x, gx)

    return _make(data, (x,), back)


def crop2d(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left h x w of a [..., H, W] tensor."""
    data = x.data[..., :h, :w]

    def back(g):
        full = np.zeros_like(x.data)
        full[..., :h, :w] = g
        _accum(x, full)

    return _make(data, (x,), back)


def _extend_indices(n: int, n_new: int) -> np.ndarray:
    # Mirror without repeating the edge sample; degenerate axes replicate.
    mode = "reflect" if n > 1 else "edge"
    return np.pad(np.arange(n), (0, n_new - n), mode=mode)


def pad2d_mirror(x: Tensor, h_new: int, w_new: int) -> Tensor:
    """Extend a [C, H, W] tensor on the bottom/right by mirroring."""
    if x.data.ndim != 3:
        raise DimensionError(f"pad2d_mirror: expected [C, H, W], got {x.shape}")
    c, h, w = x.shape
    if h_new < h or w_new < w:
        raise DimensionError(f"pad2d_mirror: target ({h_new},{w_new}) smaller than ({h},{w})")
    ic = np.arange(c)[:, None, None]
    iy = _extend_indices(h, h_new)[None, :, None]
    ix = _extend_indices(w, w_new)[None, None, :]
    data = x.data[ic, iy, ix]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (ic, iy, ix), g)
        _accum(x, gx)

    return _make(data, (x,), back)


# -- convolution --------------------------------------------------------------


def conv2d_3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 cross-correlation, zero padding 1, stride 1; x is [Cin, H, W]."""
    cin, h, wd = x.shape
    if w.shape[1] != cin or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d_3x3: kernel {w.shape} does not fit input {x.shape}")
    cout = w.shape[0]
    if b.shape != (cout,):
        raise DimensionError(f"conv2d_3x3: bias {b.shape} vs {cout} output channels")
    xp = np.zeros((cin, h + 2, wd + 2), dtype=x.data.dtype)
    xp[:, 1:-1, 1:-1] = x.data
    cols = np.empty((cin * 9, h * wd), dtype=x.data.dtype)
    for ky in range(3):
        for kx in range(3):
            slot = ky * 3 + kx
            cols[slot::9] = xp[:, ky : ky + h, kx : kx + wd].reshape(cin, -1)
    w2d = w.data.reshape(cout, cin * 9)
    data = (w2d @ cols + b.data[:, None]).reshape(cout, h, wd)

    def back(g):
        g2d = g.reshape(cout, -1)
        _accum(b, g2d.sum(axis=1))
        _accum(w, (g2d @ cols.T).reshape(w.shape))
        gcols = w2d.T @ g2d
        gxp = np.zeros_like(xp)
        for ky in range(3):
            for kx in range(3):
                slot = ky * 3 + kx
                gxp[:, ky : ky + h, kx : kx + wd] += gcols[slot::9].reshape(cin, h, wd)
        _accum(x, gxp[:, 1:-1, 1:-1])

    return _make(data, (x, w, b), back)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x[..., Cin] @ w[Cin, Cout] (+ b)."""
    y = matmul(x, w)
    return add(y, b) if b is not None else y
