"""Dense tensors with taped reverse-mode automatic differentiation.

Values are contiguous numpy buffers; the element type is selectable at
runtime (float32 for training, float64 for gradient-check suites).
Operations executed while a ComputationTape is active record a backward
rule; replaying the tape in reverse accumulates d(loss)/d(leaf) into the
``grad`` buffer of every requires_grad leaf. Gradients accumulate
additively across backward calls until explicitly zeroed.
"""

from __future__ import annotations

import functools
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEFAULT_DTYPE = np.dtype(np.float32)


def set_default_dtype(dtype) -> None:
    """Select the element type for newly created tensors (float32/float64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported element type {dt}; use float32 or float64")
    _DEFAULT_DTYPE = dt


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


class default_dtype:
    """Context manager that temporarily switches the default element type."""

    def __init__(self, dtype):
        self._dtype = dtype
        self._saved = None

    def __enter__(self):
        self._saved = get_default_dtype()
        set_default_dtype(self._dtype)
        return self

    def __exit__(self, *exc):
        set_default_dtype(self._saved)
        return False


class AutodiffError(Exception):
    """Raised on misuse of the tape or on shape/contract violations."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        return out

    def numpy(self) -> np.ndarray:
        return self.data

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    def backward(self, tape: "ComputationTape | None" = None) -> None:
        backward(self, tape)


class ComputationTape:
    """Ordered record of operations; reverse replay drives backpropagation.

    Entries are (output, backward_rule) where the rule maps the output
    gradient to (parent, contribution) pairs. Leaf contributions are
    applied in ascending recording order so that gradient accumulation is
    bitwise reproducible and matches the "sum losses then backward once"
    formulation exactly.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, Callable[[np.ndarray], list]]] = []
        self._produced: dict[int, int] = {}
        self._prev_active: "ComputationTape | None" = None

    def __len__(self):
        return len(self._entries)

    def record(self, out: Tensor, rule: Callable[[np.ndarray], list]) -> None:
        self._produced[id(out)] = len(self._entries)
        self._entries.append((out, rule))

    def clear(self) -> None:
        self._entries.clear()
        self._produced.clear()

    def __enter__(self) -> "ComputationTape":
        global _ACTIVE_TAPE
        self._prev_active = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._prev_active
        self._prev_active = None
        return False


_ACTIVE_TAPE: ComputationTape | None = None


def active_tape() -> ComputationTape | None:
    return _ACTIVE_TAPE


def backward(loss: Tensor, tape: ComputationTape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf on the tape.

    Repeated calls on the same tape accumulate (gradients add linearly).
    """
    tape = tape or _ACTIVE_TAPE
    if tape is None:
        raise AutodiffError("backward requires an active ComputationTape")
    if loss.data.ndim != 0:
        raise AutodiffError(f"loss must be rank-0, got shape {loss.shape}")
    if id(loss) not in tape._produced:
        raise AutodiffError("loss tensor was not produced under this tape")

    flows: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    leaf_contribs: dict[int, tuple[Tensor, list[tuple[int, np.ndarray]]]] = {}

    entries = tape._entries
    produced = tape._produced
    for idx in range(len(entries) - 1, -1, -1):
        out, rule = entries[idx]
        g = flows.pop(id(out), None)
        if g is None:
            continue
        for parent, contrib in rule(g):
            if not parent.requires_grad:
                continue
            pid = id(parent)
            prod_idx = produced.get(pid)
            if prod_idx is not None and prod_idx < idx:
                prev = flows.get(pid)
                flows[pid] = contrib if prev is None else prev + contrib
            else:
                bucket = leaf_contribs.setdefault(pid, (parent, []))
                bucket[1].append((idx, contrib))

    for leaf, contribs in leaf_contribs.values():
        buf = leaf.ensure_grad()
        for _, contrib in sorted(contribs, key=lambda pair: pair[0]):
            buf += contrib


def _as_tensor(value, dtype=None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value), dtype=dtype or _DEFAULT_DTYPE)


def constant(value, dtype=None) -> Tensor:
    """A non-differentiable tensor wrapping the given value."""
    return _as_tensor(value, dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    tape = _ACTIVE_TAPE
    wants = tape is not None and any(p.requires_grad for p in parents)
    out.requires_grad = wants
    if wants:
        tape.record(out, rule)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(grad.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_elementwise_shapes(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise AutodiffError(
            f"{op}: shape mismatch beyond broadcast: {a.shape} vs {b.shape}"
        ) from None


# -- elementwise arithmetic --------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    _check_elementwise_shapes(a, b, "add")
    data = a.data + b.data

    def rule(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape))]

    return _make(data, (a, b), rule)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    _check_elementwise_shapes(a, b, "sub")
    data = a.data - b.data

    def rule(g):
        return [(a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape))]

    return _make(data, (a, b), rule)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    _check_elementwise_shapes(a, b, "mul")
    data = a.data * b.data

    def rule(g):
        return [
            (a, _unbroadcast(g * b.data, a.shape)),
            (b, _unbroadcast(g * a.data, b.shape)),
        ]

    return _make(data, (a, b), rule)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    _check_elementwise_shapes(a, b, "div")
    data = a.data / b.data

    def rule(g):
        return [
            (a, _unbroadcast(g / b.data, a.shape)),
            (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
        ]

    return _make(data, (a, b), rule)


def elementwise(kind: str, a, b) -> Tensor:
    """Dispatch table for the basic binary ops."""
    try:
        fn = {"add": add, "sub": sub, "mul": mul}[kind]
    except KeyError:
        raise AutodiffError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, b)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: [(a, -g)])


def power(a: Tensor, exponent: float) -> Tensor:
    a = _as_tensor(a)
    e = float(exponent)
    data = a.data**e

    def rule(g):
        return [(a, g * e * a.data ** (e - 1.0))]

    return _make(data, (a,), rule)


def sqrt(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.sqrt(a.data)

    def rule(g):
        return [(a, g / (2.0 * data))]

    return _make(data, (a,), rule)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.exp(a.data)

    def rule(g):
        return [(a, g * data)]

    return _make(data, (a,), rule)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.log(a.data)

    def rule(g):
        return [(a, g / a.data)]

    return _make(data, (a,), rule)


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at the kink (sign(0) == 0)
    a = _as_tensor(a)
    data = np.abs(a.data)

    def rule(g):
        return [(a, g * np.sign(a.data))]

    return _make(data, (a,), rule)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def rule(g):
        return [(a, g * (a.data > 0))]

    return _make(data, (a,), rule)


# -- reductions ---------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is None:
            return [(a, np.broadcast_to(g, a.shape).copy())]
        gg = g if keepdims else np.expand_dims(g, axis)
        return [(a, np.broadcast_to(gg, a.shape).copy())]

    return _make(data, (a,), rule)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def rule(g):
        if axis is None:
            return [(a, np.broadcast_to(g / count, a.shape).copy())]
        gg = g if keepdims else np.expand_dims(g, axis)
        return [(a, np.broadcast_to(gg / count, a.shape).copy())]

    return _make(data, (a,), rule)


def _extreme(a: Tensor, axis, keepdims: bool, is_max: bool) -> Tensor:
    a = _as_tensor(a)
    npfn = np.max if is_max else np.min
    argfn = np.argmax if is_max else np.argmin
    data = npfn(a.data, axis=axis, keepdims=keepdims)

    def rule(g):
        # route gradient to the first extremal element (ties break low index)
        if axis is None:
            mask = np.zeros(a.data.size, dtype=a.dtype)
            mask[argfn(a.data)] = 1.0
            return [(a, (g * mask).reshape(a.shape))]
        am = np.expand_dims(argfn(a.data, axis=axis), axis)
        mask = np.zeros_like(a.data)
        np.put_along_axis(mask, am, 1.0, axis=axis)
        gg = g if keepdims else np.expand_dims(g, axis)
        return [(a, mask * gg)]

    return _make(data, (a,), rule)


def reduce_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _extreme(a, axis, keepdims, True)


def reduce_min(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _extreme(a, axis, keepdims, False)


# -- linear algebra / shape ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise AutodiffError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise AutodiffError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def rule(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _make(data, (a, b), rule)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def rule(g):
        return [(a, g.reshape(a.shape))]

    return _make(data, (a,), rule)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)
    data = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def rule(g):
        return [(a, np.transpose(g, inv))]

    return _make(data, (a,), rule)


# -- spatial ops --------------------------------------------------------------


@functools.lru_cache(maxsize=256)
def _col2im_indices(h_out, w_out, kh, kw, stride, w_padded):
    ii = np.arange(h_out)[:, None] * stride + np.arange(kh)[None, :]
    jj = np.arange(w_out)[:, None] * stride + np.arange(kw)[None, :]
    # (H', W', kh, kw) flat positions into the padded plane
    pos = ii[:, None, :, None] * w_padded + jj[None, :, None, :]
    return pos.ravel()


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over a [C,H,W] input with zero padding.

    Kernels may be rectangular ([O,I,kh,kw]); the public contract uses
    square kernels but the separable blur reuses the general form.
    """
    x, weight, bias = _as_tensor(x), _as_tensor(weight), _as_tensor(bias)
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise AutodiffError(
            f"conv2d expects [C,H,W] input and [O,I,kh,kw] weight, got {x.shape}, {weight.shape}"
        )
    c, h, w = x.shape
    o, i, kh, kw = weight.shape
    if i != c:
        raise AutodiffError(f"conv2d channel mismatch: input has {c}, weight expects {i}")
    if bias.shape != (o,):
        raise AutodiffError(f"conv2d bias shape {bias.shape} != ({o},)")
    if stride < 1 or padding < 0:
        raise AutodiffError(f"conv2d: bad stride {stride} or padding {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1
    if hp < kh or wp < kw or h_out < 1 or w_out < 1:
        raise AutodiffError(
            f"conv2d: empty output extent for input {x.shape}, kernel ({kh},{kw}), "
            f"stride {stride}, padding {padding}"
        )

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(h_out * w_out, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T + bias.data).T.reshape(o, h_out, w_out)

    def rule(g):
        gf = g.reshape(o, -1).T  # (H'W', O)
        grads = []
        if weight.requires_grad:
            grads.append((weight, (gf.T @ cols).reshape(weight.shape)))
        if bias.requires_grad:
            grads.append((bias, g.sum(axis=(1, 2))))
        if x.requires_grad:
            dcols = gf @ wmat  # (H'W', C*kh*kw)
            dcols = dcols.reshape(h_out, w_out, c, kh, kw).transpose(2, 0, 1, 3, 4).reshape(c, -1)
            pos = _col2im_indices(h_out, w_out, kh, kw, stride, wp)
            dxp = np.zeros((c, hp * wp), dtype=g.dtype)
            np.add.at(dxp, (np.arange(c)[:, None], pos[None, :]), dcols)
            dxp = dxp.reshape(c, hp, wp)
            dx = dxp[:, padding : padding + h, padding : padding + w] if padding else dxp
            grads.append((x, np.ascontiguousarray(dx)))
        return grads

    return _make(np.ascontiguousarray(out), (x, weight, bias), rule)


def max_pool2(x: Tensor) -> Tensor:
    """2x2 max pooling over [C,H,W]; gradient routes to the first argmax."""
    x = _as_tensor(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise AutodiffError(f"max_pool2 needs even extents, got {h}x{w}")
    win = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    data = win.max(axis=-1)

    def rule(g):
        am = win.argmax(axis=-1)  # first index on ties (row-major window order)
        mask = np.zeros_like(win)
        np.put_along_axis(mask, am[..., None], 1.0, axis=-1)
        dwin = mask * g[..., None]
        dx = dwin.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
        return [(x, np.ascontiguousarray(dx))]

    return _make(np.ascontiguousarray(data), (x,), rule)


def upsample_nearest2(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of [C,H,W]."""
    x = _as_tensor(x)
    c, h, w = x.shape
    data = x.data.repeat(2, axis=1).repeat(2, axis=2)

    def rule(g):
        return [(x, g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)))]

    return _make(data, (x,), rule)


def reflect_pad2d(x: Tensor, pad: int) -> Tensor:
    """Reflect-pad the spatial axes of a [C,H,W] tensor."""
    x = _as_tensor(x)
    if pad == 0:
        return x
    c, h, w = x.shape
    data = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    idx = np.pad(np.arange(h * w).reshape(h, w), pad, mode="reflect").ravel()

    def rule(g):
        dx = np.zeros((c, h * w), dtype=g.dtype)
        np.add.at(dx, (np.arange(c)[:, None], idx[None, :]), g.reshape(c, -1))
        return [(x, dx.reshape(c, h, w))]

    return _make(data, (x,), rule)


def zero_grads(params: Iterable[Tensor]) -> None:
    """Zero every gradient buffer in place (idempotent)."""
    for p in params:
        p.zero_grad()
