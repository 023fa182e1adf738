"""Small define-by-run tensor engine with reverse-mode differentiation.

Only the operations the codec needs are provided. Arrays are plain numpy
arrays; a :class:`Tensor` wraps one and, while gradient recording is enabled,
remembers how it was produced so that :meth:`Tensor.backward` can push
gradients back to the leaves.

Convolution layout is ``[N, C, T, F]`` (batch, channels, time, frequency).
"""

from __future__ import annotations

import functools

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

WEIGHT_NORM_EPS = 1e-12
LAYER_NORM_EPS = 1e-5

_grad_enabled = True


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data, parents: Sequence["Tensor"], backward: Callable, op: str) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out.op = op
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if seed is None:
            if self.data.size != 1:
                raise DimensionError(f"backward needs a scalar seed, got shape {self.shape}")
            seed = np.ones_like(self.data)
        graph = Graph.from_root(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(seed, dtype=self.dtype)}
        for node in reversed(graph.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            pgrads = node._backward(g)
            for p, pg in zip(node._parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ------------------------------------------------------------
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
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


@dataclass
class Graph:
    """Topologically ordered nodes that lead to a root tensor."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> "Graph":
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
        return cls(order)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    # python scalars adopt the partner's dtype so float32 graphs stay float32
    if like is not None and np.ndim(x) == 0:
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def gradients(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Run backward from ``loss`` and return one gradient per param.

    Parameters that are not connected to the loss get an all-zero gradient.
    """
    params = list(params)
    for p in params:
        p.grad = None
    loss.backward()
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(out, (a, b), bw, "div")


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return Tensor._make(out, (x,), lambda g: (0.5 * g / out,), "sqrt")


def tabs(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return Tensor._make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient passes only where x > floor."""
    x = as_tensor(x)
    mask = x.data > floor
    return Tensor._make(np.where(mask, x.data, floor).astype(x.dtype), (x,),
                        lambda g: (g * mask,), "clamp_min")


def elu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    # expm1(min(x, 0)) vanishes for x >= 0, so both branches are sums
    em1 = np.expm1(np.minimum(x.data, 0.0))
    out = em1 + np.maximum(x.data, 0.0)
    return Tensor._make(out, (x,), lambda g: (g * (em1 + 1.0),), "elu")


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    pos = x.data >= 0
    out = np.maximum(x.data, slope * x.data) if 0 <= slope <= 1 else np.where(pos, x.data, slope * x.data)

    def bw(g):
        # float mask arithmetic is much faster than boolean select
        m = pos.astype(g.dtype)
        m *= 1.0 - slope
        m += slope
        m *= g
        return (m,)

    return Tensor._make(out, (x,), bw, "leaky_relu")


def hypot(a: Tensor, b: Tensor) -> Tensor:
    """sqrt(a^2 + b^2); the gradient at the origin is taken as zero."""
    a, b = as_tensor(a), as_tensor(b)
    out = np.sqrt(a.data * a.data + b.data * b.data)
    live = (out > 0).astype(out.dtype)
    safe = out + (1.0 - live)

    def bw(g):
        scale = g / safe
        scale *= live
        return scale * a.data, scale * b.data

    return Tensor._make(out, (a, b), bw, "hypot")


def stop_gradient(x: Tensor) -> Tensor:
    """Identity in the forward pass; blocks gradients in the backward pass."""
    return Tensor(as_tensor(x).data)


# -- reductions and shape ops ---------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor._make(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return Tensor._make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return Tensor._make(x.data[idx], (x,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def pad(x: Tensor, widths) -> Tensor:
    """Zero padding; ``widths`` as for ``np.pad``."""
    x = as_tensor(x)
    sl = tuple(slice(b, b + n) for (b, _), n in zip(widths, x.shape))
    return Tensor._make(np.pad(x.data, widths), (x,), lambda g: (g[sl],), "pad")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return Tensor._make(a.data @ b.data, (a, b), bw, "matmul")


# -- convolution ---------------------------------------------------------------

@dataclass(frozen=True)
class PadSpec:
    """Zero padding (before, after) on the time and frequency axes."""

    time: tuple[int, int] = (0, 0)
    freq: tuple[int, int] = (0, 0)

    @staticmethod
    def _same(k: int, s: int) -> tuple[int, int]:
        total = max(k - s, 0)
        return (total // 2, total - total // 2)

    @classmethod
    def causal(cls, kernel: tuple[int, int], stride: tuple[int, int]) -> "PadSpec":
        """Past-only time padding, 'same' frequency padding.

        ``kT - sT`` zero frames go strictly before the signal so output frame
        ``t`` sees input frames up to ``(t + 1) * sT - 1`` and ``T' = T // sT``.
        For stride 1 this is the usual ``kT - 1``.
        """
        kt, kf = kernel
        st, sf = stride
        return cls((kt - st, 0), cls._same(kf, sf))

    @classmethod
    def causal_transpose(cls, kernel: tuple[int, int], stride: tuple[int, int]) -> "PadSpec":
        """Geometry whose transposed convolution is causal in time.

        The padding sits after the signal; the adjoint of such a convolution
        maps input frame ``t`` onto output frames ``sT*t .. sT*t + kT - 1``.
        """
        kt, kf = kernel
        st, sf = stride
        return cls((0, kt - st), cls._same(kf, sf))

    @classmethod
    def symmetric(cls, kernel: tuple[int, int]) -> "PadSpec":
        kt, kf = kernel
        return cls(((kt - 1) // 2, (kt - 1) // 2), ((kf - 1) // 2, (kf - 1) // 2))

    @classmethod
    def valid(cls) -> "PadSpec":
        return cls()


def conv_output_size(n: int, k: int, s: int, before: int, after: int) -> int:
    return (n + before + after - k) // s + 1


def _check_conv(x: np.ndarray, w: np.ndarray, stride, pad: PadSpec):
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 4-d input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise DimensionError(f"axis 1 (channels): input has {x.shape[1]}, kernel expects {w.shape[1]}")
    st, sf = stride
    if st < 1 or sf < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    for axis, n, k, (b, a) in ((2, x.shape[2], w.shape[2], pad.time), (3, x.shape[3], w.shape[3], pad.freq)):
        if k > n + b + a:
            raise DimensionError(f"axis {axis}: kernel {k} exceeds padded input {n + b + a}")


def _tap_range(n_out: int, n_in: int, tap: int, stride: int, before: int) -> tuple[int, int, int]:
    """Output positions [lo, hi) whose tap ``tap`` lands inside the unpadded input, and the first input index."""
    lo = max(0, -((tap - before) // stride)) if tap < before else 0
    hi = min(n_out, (n_in - 1 - tap + before) // stride + 1)
    return lo, max(lo, hi), lo * stride + tap - before


@functools.lru_cache(maxsize=4096)
def _tap_plan(in_hw, out_hw, kernel, stride, pad: PadSpec) -> tuple:
    """(i, j, cols slice, input slice) for every tap touching the unpadded input."""
    (t, f), (t2, f2), (kt, kf), (st, sf) = in_hw, out_hw, kernel, stride
    plan = []
    for i in range(kt):
        tlo, thi, ti = _tap_range(t2, t, i, st, pad.time[0])
        if thi == tlo:
            continue
        for j in range(kf):
            flo, fhi, fj = _tap_range(f2, f, j, sf, pad.freq[0])
            if fhi == flo:
                continue
            plan.append((i, j, (slice(tlo, thi), slice(flo, fhi)),
                         (slice(ti, ti + st * (thi - tlo - 1) + 1, st), slice(fj, fj + sf * (fhi - flo - 1) + 1, sf))))
    return tuple(plan)


def _im2col(xc: np.ndarray, kt: int, kf: int, stride, pad: PadSpec, out_hw) -> np.ndarray:
    """Channel-major input [C, N, T, F] -> columns [C, kT, kF, N, T', F'] (zeros in the padding)."""
    c, n, t, f = xc.shape
    t2, f2 = out_hw
    plan = _tap_plan((t, f), (t2, f2), (kt, kf), tuple(stride), pad)
    cols = np.empty((c, kt, kf, n, t2, f2), dtype=xc.dtype)
    touched = np.zeros((kt, kf), bool)
    for i, j, (ot, of), (it, if_) in plan:
        touched[i, j] = True
        if (ot.stop - ot.start, of.stop - of.start) != (t2, f2):
            cols[:, i, j] = 0
        cols[:, i, j, :, ot, of] = xc[:, :, it, if_]
    for i, j in zip(*np.nonzero(~touched)):
        cols[:, i, j] = 0
    return cols


def _col2im(cols: np.ndarray, stride, pad: PadSpec, in_hw) -> np.ndarray:
    """Adjoint of :func:`_im2col`: columns [C, kT, kF, N, T', F'] -> [C, N, T, F]."""
    c, kt, kf, n, t2, f2 = cols.shape
    xc = np.zeros((c, n) + tuple(in_hw), dtype=cols.dtype)
    for i, j, (ot, of), (it, if_) in _tap_plan(tuple(in_hw), (t2, f2), (kt, kf), tuple(stride), pad):
        xc[:, :, it, if_] += cols[:, i, j, :, ot, of]
    return xc


def _out_hw(in_hw, kernel, stride, pad: PadSpec):
    return (conv_output_size(in_hw[0], kernel[0], stride[0], *pad.time),
            conv_output_size(in_hw[1], kernel[1], stride[1], *pad.freq))


def _conv_cols(x: np.ndarray, w: np.ndarray, stride, pad: PadSpec):
    _check_conv(x, w, stride, pad)
    co, ci, kt, kf = w.shape
    n = x.shape[0]
    t2, f2 = _out_hw(x.shape[2:], (kt, kf), stride, pad)
    cols = _im2col(x.transpose(1, 0, 2, 3), kt, kf, stride, pad, (t2, f2)).reshape(ci * kt * kf, -1)
    out = (w.reshape(co, -1) @ cols).reshape(co, n, t2, f2).transpose(1, 0, 2, 3)
    return out, cols


def conv2d_raw(x: np.ndarray, w: np.ndarray, stride=(1, 1), pad: PadSpec = PadSpec()) -> np.ndarray:
    return _conv_cols(x, w, stride, pad)[0]


def conv2d_transpose_raw(y: np.ndarray, w: np.ndarray, stride=(1, 1), pad: PadSpec = PadSpec(),
                         out_size: tuple[int, int] | None = None) -> np.ndarray:
    """Adjoint of :func:`conv2d_raw` for an input of spatial size ``out_size``."""
    co, ci, kt, kf = w.shape
    if y.ndim != 4 or y.shape[1] != co:
        raise DimensionError(f"axis 1 (channels): input has {y.shape[1] if y.ndim == 4 else y.shape}, "
                             f"kernel expects {co}")
    st, sf = stride
    n, _, t2, f2 = y.shape
    if out_size is None:
        out_size = ((t2 - 1) * st + kt - sum(pad.time), (f2 - 1) * sf + kf - sum(pad.freq))
    t, f = out_size
    if conv_output_size(t, kt, st, *pad.time) != t2 or conv_output_size(f, kf, sf, *pad.freq) != f2:
        raise DimensionError(f"out_size {out_size} inconsistent with input grid {(t2, f2)}")
    cols = w.reshape(co, -1).T @ y.transpose(1, 0, 2, 3).reshape(co, -1)
    return _col2im(cols.reshape(ci, kt, kf, n, t2, f2), stride, pad, (t, f)).transpose(1, 0, 2, 3)


def _conv_weight_grad(x: np.ndarray, g: np.ndarray, kshape, stride, pad: PadSpec,
                      cols: np.ndarray | None = None) -> np.ndarray:
    """Kernel gradient of ``conv2d_raw(x, w)`` given the output gradient ``g``."""
    co, ci, kt, kf = kshape
    if cols is None:
        cols = _im2col(x.transpose(1, 0, 2, 3), kt, kf, stride, pad, g.shape[2:]).reshape(ci * kt * kf, -1)
    return (g.transpose(1, 0, 2, 3).reshape(co, -1) @ cols.T).reshape(kshape)


def _as4d(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    return x, False


def _bias_out(out: np.ndarray, bias: Tensor | None) -> np.ndarray:
    if bias is None:
        return out
    return out + bias.data.reshape(1, -1, 1, 1)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride=(1, 1),
           pad: PadSpec = PadSpec()) -> Tensor:
    """2-d cross-correlation. ``x`` is [N, C_in, T, F] or [C_in, T, F]; ``w`` is [C_out, C_in, kT, kF]."""
    x, w = as_tensor(x), as_tensor(w)
    bias = None if bias is None else as_tensor(bias, like=x)
    x, squeeze = _as4d(x)
    stride = tuple(stride)
    out, cols = _conv_cols(x.data, w.data, stride, pad)
    if not w.requires_grad:
        cols = None
    in_size = x.shape[2:]

    def bw(g):
        gx = conv2d_transpose_raw(g, w.data, stride, pad, in_size) if x.requires_grad else None
        gw = _conv_weight_grad(x.data, g, w.shape, stride, pad, cols) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    y = Tensor._make(_bias_out(out, bias), parents, (lambda g: bw(g)[:2]) if bias is None else bw, "conv2d")
    return reshape(y, y.shape[1:]) if squeeze else y


def conv2d_transpose(x: Tensor, w: Tensor, bias: Tensor | None = None, stride=(1, 1),
                     pad: PadSpec = PadSpec(), out_size: tuple[int, int] | None = None) -> Tensor:
    """Transposed convolution: the adjoint of :func:`conv2d` with the same kernel and geometry.

    ``w`` is [C_a, C_b, kT, kF] and maps [N, C_a, T', F'] to [N, C_b, T, F].
    """
    x, w = as_tensor(x), as_tensor(w)
    bias = None if bias is None else as_tensor(bias, like=x)
    x, squeeze = _as4d(x)
    stride = tuple(stride)
    out = conv2d_transpose_raw(x.data, w.data, stride, pad, out_size)

    def bw(g):
        gx, cols = _conv_cols(g, w.data, stride, pad) if x.requires_grad else (None, None)
        gw = _conv_weight_grad(g, x.data, w.shape, stride, pad, cols) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    y = Tensor._make(_bias_out(out, bias), parents, (lambda g: bw(g)[:2]) if bias is None else bw,
                     "conv2d_transpose")
    return reshape(y, y.shape[1:]) if squeeze else y


# -- normalization -------------------------------------------------------------

def weight_norm(v: Tensor, g: Tensor, axis: int = 0) -> Tensor:
    """w = g * v / ||v||, the norm taken per slice along ``axis``."""
    v, g = as_tensor(v), as_tensor(g)
    red = tuple(a for a in range(v.ndim) if a != axis)
    bshape = [1] * v.ndim
    bshape[axis] = -1
    norm = np.sqrt(np.sum(v.data * v.data, axis=red, keepdims=True) + WEIGHT_NORM_EPS)
    gb = g.data.reshape(bshape)
    unit = v.data / norm
    out = gb * unit

    def bw(grad):
        dot = np.sum(grad * unit, axis=red, keepdims=True)
        gg = dot.reshape(g.shape) if g.requires_grad else None
        gv = gb / norm * (grad - unit * dot) if v.requires_grad else None
        return gv, gg

    return Tensor._make(out, (v, g), bw, "weight_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, batch_dims: int = 1,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over every axis after the first ``batch_dims`` axes."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    red = tuple(range(batch_dims, x.ndim))
    n = int(np.prod([x.shape[a] for a in red]))
    xhat = x.data - x.data.mean(axis=red, keepdims=True)
    inv = 1.0 / np.sqrt(np.mean(np.square(xhat), axis=red, keepdims=True) + eps)
    xhat *= inv
    out = xhat * gamma.data
    out += beta.data

    def bw(g):
        gx = ggam = gbet = None
        if gamma.requires_grad:
            ggam = _unbroadcast(g * xhat, gamma.shape)
        if beta.requires_grad:
            gbet = _unbroadcast(g, beta.shape)
        if x.requires_grad:
            gxh = g * gamma.data
            s1 = gxh.sum(axis=red, keepdims=True) / n
            s2 = np.sum(gxh * xhat, axis=red, keepdims=True) / n
            gxh -= s1
            gxh -= xhat * s2
            gxh *= inv
            gx = gxh
        return gx, ggam, gbet

    return Tensor._make(out, (x, gamma, beta), bw, "layer_norm")


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> None:
    """In-place bias-corrected ADAM update of ``params``; increments ``state.step``."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"grad for {name!r} has shape {g.shape}, param has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def straight_through(x: Tensor, value: np.ndarray) -> Tensor:
    """Forward ``value`` exactly; backward passes the gradient to ``x`` unchanged.

    Equivalent to ``x + stop_gradient(value - x)`` without the rounding of the
    add/subtract round trip.
    """
    x = as_tensor(x)
    value = np.asarray(value, dtype=x.dtype)
    if value.shape != x.shape:
        raise DimensionError(f"straight-through value shape {value.shape} != {x.shape}")
    return Tensor._make(value, (x,), lambda g: (g,), "straight_through")
