"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation records its parents and a backward rule on the
output tensor. Calling :meth:`Tensor.backward` traces the graph into a
:class:`Tape` (a topologically ordered node list) and replays it in reverse,
accumulating gradients into the leaf tensors that have ``requires_grad``.

The graph is rebuilt on every forward pass, so one optimisation step owns one
tape; nothing is shared between steps or threads.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_K = 0.044715

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """A dense real array that can take part in gradient computation.

    Parameters
    ----------
    data : array_like
        Values; converted to a float64 array.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad`` on backward.
    name : str, optional
        Label used in error messages and model serialization.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not np.isfinite(arr).all():
            raise FloatingPointError(f"tensor {name or ''} contains non-finite values".replace("  ", " "))
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"

    # -- basic properties -------------------------------------------------
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
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Backpropagate from this tensor.

        ``grad`` defaults to 1 and is required for non-scalar outputs.
        """
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() on a tensor of shape {self.shape} needs an explicit grad")
            grad = np.ones_like(self.data)
        grad = np.broadcast_to(np.asarray(grad, dtype=DTYPE), self.shape)
        Tape.trace(self).run(self, grad)

    # -- operator sugar ---------------------------------------------------
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
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Tape:
    """Operations recorded between the leaves and one output, in topological order."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
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
        return cls(order)

    def run(self, root: Tensor, grad: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(root): np.array(grad, dtype=DTYPE)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


# ---------------------------------------------------------------------------
# graph construction helpers
# ---------------------------------------------------------------------------

def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(out: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Wrap ``out`` as a tensor produced by ``op`` from ``parents``.

    ``backward`` maps the upstream gradient to one gradient (or None) per parent.
    Custom fused operations elsewhere in the package are built with this.
    """
    if not np.isfinite(out).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = None
    t._op = op
    t.requires_grad = any(p.requires_grad for p in parents)
    if t.requires_grad:
        t._parents = tuple(parents)
        t._backward = backward
    else:
        t._parents = ()
        t._backward = None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return record(ad * bd, (a, b), backward, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def absolute(a) -> Tensor:
    # subgradient of |x| at 0 is 0
    a = as_tensor(a)
    sign = np.sign(a.data)
    return record(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid(a.data)
    return record(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + _GELU_K * x2))
    y = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_K * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return record(y, (a,), backward, "gelu")


_BINARY = {"add": add, "sub": sub, "mul": mul}
_UNARY = {"abs": absolute, "sigmoid": sigmoid, "gelu": gelu, "relu": relu, "neg": neg}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op in _BINARY:
        if b is None:
            raise TypeError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise ShapeError("sum of an empty tensor")
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward, "sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise ShapeError("mean of an empty tensor")
    shape = a.shape
    count = a.size if axis is None else int(np.prod([shape[ax] for ax in np.atleast_1d(axis)]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return record(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), backward, "mean")


def reduce(op: str, a) -> Tensor:
    if op == "sum":
        return reduce_sum(a)
    if op == "mean":
        return reduce_mean(a)
    raise ValueError(f"unknown reduction {op!r}")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    basic = all(isinstance(k, (slice, int, type(Ellipsis), type(None)))
                for k in (idx if isinstance(idx, tuple) else (idx,)))

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return record(np.array(a.data[idx], dtype=DTYPE), (a,), backward, "getitem")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return record(ad @ bd, (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# convolution, resampling, normalisation
# ---------------------------------------------------------------------------

def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x, kernel, bias=None, padding=0, stride=1, groups: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    Parameters
    ----------
    x : Tensor
        ``[C_in, H, W]`` or batched ``[B, C_in, H, W]``.
    kernel : Tensor
        ``[C_out, C_in // groups, kh, kw]``.
    bias : Tensor, optional
        ``[C_out]``.
    padding, stride : int or (int, int)
        Per-axis (height, width) values.
    groups : int
        Channel groups; ``groups == C_in == C_out`` is a depthwise convolution.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected [C,H,W] or [B,C,H,W] input and 4-d kernel, got {x.shape} and {kernel.shape}")
    X = x.data if batched else x.data[None]
    B, C, H, W = X.shape
    O, Cg, kh, kw = kernel.shape
    ph, pw = _pair(padding)
    sh, sw = _pair(stride)
    if groups < 1 or C % groups or O % groups or Cg != C // groups:
        raise ShapeError(f"conv2d: input channels {C}, kernel {kernel.shape} and groups={groups} do not agree")
    if ph < 0 or pw < 0 or sh < 1 or sw < 1:
        raise ValueError("conv2d: padding must be >= 0 and stride >= 1")
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    for axis, size in (("height", Ho), ("width", Wo)):
        if size < 1:
            raise ShapeError(f"conv2d: output {axis} would be {size} for input {x.shape}, kernel {kernel.shape}")

    G, Og = groups, O // groups
    Xp = np.pad(X, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else X
    Xg = Xp.reshape(B, G, Cg, Xp.shape[2], Xp.shape[3])
    K = kernel.data.reshape(G, Og, Cg, kh, kw)
    hs = sh * (Ho - 1) + 1
    ws = sw * (Wo - 1) + 1
    depthwise = Cg == 1 and Og == 1

    def taps():
        for i in range(kh):
            for j in range(kw):
                yield i, j, (slice(None), slice(None), slice(None), slice(i, i + hs, sh), slice(j, j + ws, sw))

    if depthwise:
        out = np.zeros((B, G, 1, Ho, Wo), dtype=DTYPE)
        for i, j, sl in taps():
            out += Xg[sl] * K[:, 0, 0, i, j].reshape(1, G, 1, 1, 1)
        cols = None
    else:
        cols = np.empty((B, G, Cg, kh, kw, Ho, Wo), dtype=DTYPE)
        for i, j, sl in taps():
            cols[:, :, :, i, j] = Xg[sl]
        cols = cols.reshape(B, G, Cg * kh * kw, Ho * Wo)
        out = np.matmul(K.reshape(1, G, Og, Cg * kh * kw), cols)
    out = out.reshape(B, O, Ho, Wo)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (O,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {O} output channels")
        out = out + bias.data.reshape(1, O, 1, 1)
        parents.append(bias)
    if not batched:
        out = out[0]

    def backward(g):
        gb = g if batched else g[None]
        gg = gb.reshape(B, G, Og, Ho, Wo)
        gx = gk = gbias = None
        if depthwise:
            gk_arr = np.zeros((G, kh, kw), dtype=DTYPE)
            gxp = np.zeros_like(Xg) if x.requires_grad else None
            for i, j, sl in taps():
                if kernel.requires_grad:
                    gk_arr[:, i, j] = np.einsum("bghw,bghw->g", gg[:, :, 0], Xg[sl][:, :, 0])
                if gxp is not None:
                    gxp[sl] += gg * K[:, 0, 0, i, j].reshape(1, G, 1, 1, 1)
            gk = gk_arr.reshape(kernel.shape)
        else:
            g2 = gg.reshape(B, G, Og, Ho * Wo)
            if kernel.requires_grad:
                gk = np.matmul(g2, np.swapaxes(cols, -1, -2)).sum(axis=0).reshape(kernel.shape)
            gxp = None
            if x.requires_grad:
                gcols = np.matmul(np.swapaxes(K.reshape(1, G, Og, Cg * kh * kw), -1, -2), g2)
                gcols = gcols.reshape(B, G, Cg, kh, kw, Ho, Wo)
                gxp = np.zeros_like(Xg)
                for i, j, sl in taps():
                    gxp[sl] += gcols[:, :, :, i, j]
        if gxp is not None:
            gxp = gxp.reshape(Xp.shape)
            gx = gxp[:, :, ph:ph + H, pw:pw + W]
            if not batched:
                gx = gx[0]
        if bias is not None:
            gbias = gb.sum(axis=(0, 2, 3))
            return gx, gk, gbias
        return gx, gk

    return record(out, parents, backward, "conv2d")


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Interpolation weights (align_corners=False) mapping ``n_in`` samples to ``n_out``."""
    if n_in < 1 or n_out < 1:
        raise ValueError("resize dimensions must be >= 1")
    M = np.zeros((n_out, n_in), dtype=DTYPE)
    if n_in == n_out:
        np.fill_diagonal(M, 1.0)
        return M
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(M, (rows, lo), 1.0 - frac)
    np.add.at(M, (rows, hi), frac)
    return M


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize of the last two axes of ``x`` (``[C,H,W]`` or ``[B,C,H,W]``)."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target must be >= 1, got {out_h}x{out_w}")
    H, W = x.shape[-2:]
    Rh = bilinear_matrix(H, out_h)
    Rw = bilinear_matrix(W, out_w)
    out = Rh @ x.data @ Rw.T
    return record(out, (x,), lambda g: (Rh.T @ g @ Rw,), "resize_bilinear")


def layer_norm_channels(x, weight, bias, eps: float = 1e-6) -> Tensor:
    """Normalise over the channel axis (-3) independently at each spatial position."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    C = x.shape[-3]
    if weight.shape != (C,) or bias.shape != (C,):
        raise ShapeError(f"layer_norm_channels: expected ({C},) affine params, got {weight.shape}, {bias.shape}")
    xd = x.data
    mu = xd.mean(axis=-3, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-3, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    w = weight.data.reshape(C, 1, 1)
    out = xhat * w + bias.data.reshape(C, 1, 1)
    red = tuple(ax for ax in range(xd.ndim) if ax != xd.ndim - 3)

    def backward(g):
        dxhat = g * w
        gx = inv * (dxhat - dxhat.mean(axis=-3, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-3, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return record(out, (x, weight, bias), backward, "layer_norm")


# ---------------------------------------------------------------------------
# user-registered linear operators
# ---------------------------------------------------------------------------

def register_linear_op(forward: Callable[[np.ndarray], np.ndarray],
                       adjoint: Callable[[np.ndarray], np.ndarray],
                       name: str = "linear_op") -> Callable[[Tensor], Tensor]:
    """Turn a linear map and its adjoint into a differentiable tensor operation.

    The caller is responsible for ``adjoint`` really being the transpose of
    ``forward``; :func:`dot_product_test` checks it.
    """

    def apply(x) -> Tensor:
        x = as_tensor(x)
        shape = x.shape
        out = np.asarray(forward(x.data), dtype=DTYPE)
        return record(out, (x,), lambda g: (np.asarray(adjoint(g), dtype=DTYPE).reshape(shape),), name)

    apply.forward = forward
    apply.adjoint = adjoint
    apply.__name__ = name
    return apply


def dot_product_test(forward, adjoint, in_shape, out_shape, trials: int = 10,
                     rng: np.random.Generator | None = None) -> float:
    """Worst relative mismatch of <f(x), y> against <x, f^T(y)> over random pairs."""
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(in_shape)
        y = rng.standard_normal(out_shape)
        fx = np.asarray(forward(x))
        lhs = float(np.vdot(fx, y))
        rhs = float(np.vdot(x, np.asarray(adjoint(y))))
        denom = np.linalg.norm(fx) * np.linalg.norm(y) + 1e-30
        worst = max(worst, abs(lhs - rhs) / denom)
    return worst


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def numerical_grad(fn: Callable[[], Tensor], param: Tensor, index: tuple, h: float | None = None) -> float:
    """Central difference of scalar ``fn()`` with respect to ``param.data[index]``."""
    x0 = float(param.data[index])
    if h is None:
        h = np.cbrt(np.finfo(DTYPE).eps) * max(1.0, abs(x0))
    param.data[index] = x0 + h
    fp = float(fn().data)
    param.data[index] = x0 - h
    fm = float(fn().data)
    param.data[index] = x0
    return (fp - fm) / (2.0 * h)


def gradient_check(fn: Callable[[], Tensor], params: Iterable[Tensor], n_samples: int = 20,
                   rng: np.random.Generator | None = None) -> float:
    """Largest relative error between backprop and central differences at sampled coordinates.

    The relative error uses ``max(|analytic|, |numeric|, 1e-8)`` as the scale.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    params = list(params)
    for p in params:
        p.grad = None
    fn().backward()
    coords = [(p, tuple(int(i) for i in np.unravel_index(rng.integers(p.size), p.shape)))
              for p in (params[k] for k in rng.integers(len(params), size=n_samples))]
    worst = 0.0
    for p, idx in coords:
        analytic = float(p.grad[idx]) if p.grad is not None else 0.0
        numeric = numerical_grad(fn, p, idx)
        scale = max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic - numeric) / scale)
    return worst
